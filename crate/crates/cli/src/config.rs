//! Flat TOML configuration files. Every key is optional; command-line flags
//! override file values and the merged result is written next to the outputs.

use std::path::{Path, PathBuf};

use pseudosurv::gee::CorrelationKind;
use pseudosurv::sim::{parse_methods, Method, PointEstimate};
use pseudosurv::surv::GridRule;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub input: Option<PathBuf>,
    pub time: String,
    pub status: String,
    pub arm: String,
    pub covariates: Vec<String>,
    pub methods: String,
    pub k: usize,
    pub correlation: String,
    pub grid_rule: String,
    pub standardize_covariates: bool,
    /// `normal` or `cauchy` prior on every Bayesian GMM coefficient.
    pub prior: String,
    /// Prior sd (normal) or scale (Cauchy); `N(0,1)` for n ≤ 100 and `N(0,10²)` otherwise when unset.
    pub prior_scale: Option<f64>,
    pub chains: usize,
    pub iterations: usize,
    pub warmup: usize,
    pub thin: usize,
    pub pem_iterations: usize,
    pub pem_warmup: usize,
    pub pem_thin: usize,
    /// Thresholds `c` for posterior probabilities `P(log HR < c)`.
    pub tail_thresholds: Vec<f64>,
    pub level: f64,
    pub point: String,
    pub out: PathBuf,
    pub seed: u64,
    pub draws: bool,
    pub threads: Option<usize>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            input: None,
            time: "time".into(),
            status: "status".into(),
            arm: "arm".into(),
            covariates: Vec::new(),
            methods: "cox,gee,gmm,pem,bayes-gmm".into(),
            k: 5,
            correlation: "IND".into(),
            grid_rule: "event-quantiles".into(),
            standardize_covariates: false,
            prior: "normal".into(),
            prior_scale: None,
            chains: 3,
            iterations: 10_000,
            warmup: 2_000,
            thin: 5,
            pem_iterations: 40_000,
            pem_warmup: 2_000,
            pem_thin: 20,
            // 0 and the noninferiority margin ln 1.43
            tail_thresholds: vec![0.0, 1.43f64.ln()],
            level: 0.95,
            point: "mean".into(),
            out: PathBuf::from("pseudosurv-out"),
            seed: 20240101,
            draws: false,
            threads: None,
        }
    }
}

/// Parsed, validated view of an [`AnalysisConfig`].
#[derive(Debug, Clone)]
pub struct ResolvedAnalysis {
    pub input: PathBuf,
    pub methods: Vec<Method>,
    pub correlation: CorrelationKind,
    pub grid_rule: GridRule,
    pub point: PointEstimate,
}

impl AnalysisConfig {
    pub fn resolve(&self) -> CliResult<ResolvedAnalysis> {
        let input = self
            .input
            .clone()
            .ok_or_else(|| CliError::Usage("no input file given (use --input or `input` in the config)".into()))?;
        let methods = parse_methods(&self.methods)?;
        if self.k == 0 {
            return Err(CliError::Usage("k must be at least 1".into()));
        }
        if let Some(t) = self.tail_thresholds.iter().find(|t| !t.is_finite()) {
            return Err(CliError::Usage(format!("tail threshold {t} is not finite")));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(CliError::Usage(format!("level must lie in (0, 1), got {}", self.level)));
        }
        if !matches!(self.prior.as_str(), "normal" | "cauchy") {
            return Err(CliError::Usage(format!("unknown prior '{}' (expected normal or cauchy)", self.prior)));
        }
        if let Some(s) = self.prior_scale.filter(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(CliError::Usage(format!("prior scale must be positive, got {s}")));
        }
        if self.covariates.iter().any(|c| c == &self.time || c == &self.status || c == &self.arm) {
            return Err(CliError::Usage("a covariate repeats the time, status or arm column".into()));
        }
        Ok(ResolvedAnalysis {
            input,
            methods,
            correlation: self.correlation.parse()?,
            grid_rule: self.grid_rule.parse()?,
            point: parse_point(&self.point)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Named grid: core, table1, table2, table3, table4 or ksens.
    pub grid: String,
    pub n: usize,
    pub censoring_rate: f64,
    pub log_hr: f64,
    pub shape: f64,
    pub k: usize,
    pub correlation: String,
    pub grid_rule: String,
    /// Replications per scenario; `None` picks the desk- or paper-scale default.
    pub nsim: Option<usize>,
    pub methods: String,
    pub seed: u64,
    pub point: String,
    /// `desk` (200 replications, 50 when a Bayesian method is included) or `paper` (1000).
    pub scale: String,
    pub out: PathBuf,
    pub threads: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        let core = pseudosurv::sim::Scenario::core();
        Self {
            grid: "core".into(),
            n: core.n,
            censoring_rate: core.censoring_rate,
            log_hr: core.log_hr,
            shape: core.shape,
            k: core.k,
            correlation: "IND".into(),
            grid_rule: "event-quantiles".into(),
            nsim: None,
            methods: "cox,gee,gmm,pem,bayes-gmm".into(),
            seed: core.seed,
            point: "mean".into(),
            scale: "desk".into(),
            out: PathBuf::from("pseudosurv-sim"),
            threads: None,
        }
    }
}

pub fn parse_point(s: &str) -> CliResult<PointEstimate> {
    match s.to_ascii_lowercase().as_str() {
        "mean" => Ok(PointEstimate::Mean),
        "median" => Ok(PointEstimate::Median),
        other => Err(CliError::Usage(format!("unknown point estimate '{other}' (expected mean or median)"))),
    }
}

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(CliError::io(format!("reading {}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn write_resolved<T: Serialize>(cfg: &T, dir: &Path) -> CliResult<()> {
    let text = toml::to_string(cfg).map_err(|e| CliError::Usage(format!("cannot serialize config: {e}")))?;
    let path = dir.join("resolved-config.toml");
    std::fs::write(&path, text).map_err(CliError::io(format!("writing {}", path.display())))
}
