//! Monte Carlo harness for two-arm trials with Weibull event times and
//! uniform censoring.
//!
//! Each replication draws one dataset and fits every requested method on it,
//! so the methods are compared on paired data. Replication seeds depend only
//! on the data-generating parameters and the replication index; changing an
//! analysis knob (K, working correlation) therefore reuses the same datasets.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Open01;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{fit_bayes_gmm, BayesGmmOptions, PriorSpec};
use crate::bench::{fit_cox, fit_pem, PemSpec};
use crate::design::build_design;
use crate::fit::{wald_interval, FitResult};
use crate::gee::{fit_gee, CorrelationKind, WorkingCorrelation};
use crate::gmm::{fit_gmm, BasisSet};
use crate::mcmc::McmcConfig;
use crate::pseudo::pseudo_observations;
use crate::surv::{select_time_grid_with, GridRule, SurvivalDataset};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Cox,
    Gee,
    Gmm,
    Pem,
    BayesGmm,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Cox, Method::Gee, Method::Gmm, Method::Pem, Method::BayesGmm];

    pub fn label(self) -> &'static str {
        match self {
            Method::Cox => "Cox",
            Method::Gee => "GEE",
            Method::Gmm => "GMM",
            Method::Pem => "PEM",
            Method::BayesGmm => "Bayesian GMM",
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Method::Cox => "cox",
            Method::Gee => "gee",
            Method::Gmm => "gmm",
            Method::Pem => "pem",
            Method::BayesGmm => "bayes-gmm",
        }
    }

    pub fn is_bayesian(self) -> bool {
        matches!(self, Method::Pem | Method::BayesGmm)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cox" => Ok(Method::Cox),
            "gee" => Ok(Method::Gee),
            "gmm" | "qif" => Ok(Method::Gmm),
            "pem" => Ok(Method::Pem),
            "bayes-gmm" | "bgmm" | "bayesian-gmm" => Ok(Method::BayesGmm),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected cox, gee, gmm, pem, bayes-gmm)"
            ))),
        }
    }
}

/// Parses a comma-separated method list.
pub fn parse_methods(s: &str) -> Result<Vec<Method>> {
    let methods: Vec<Method> = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if methods.is_empty() {
        return Err(Error::Config("method list is empty".into()));
    }
    Ok(methods)
}

/// How the Bayesian point estimate is taken from the posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointEstimate {
    #[default]
    Mean,
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n: usize,
    pub censoring_rate: f64,
    pub log_hr: f64,
    pub shape: f64,
    pub nsim: usize,
    pub seed: u64,
    /// Number of pseudo-observation time points.
    pub k: usize,
    pub correlation: CorrelationKind,
    pub grid_rule: GridRule,
}

impl Scenario {
    /// `n = 500`, 20% censoring, `log HR = −0.3`.
    pub fn core() -> Self {
        Self {
            n: 500,
            censoring_rate: 0.2,
            log_hr: -0.3,
            shape: 0.6,
            nsim: 200,
            seed: 2024,
            k: 5,
            correlation: CorrelationKind::Ind,
            grid_rule: GridRule::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 || !self.n.is_multiple_of(2) {
            return Err(Error::Config(format!("n must be even and at least 4, got {}", self.n)));
        }
        if !(self.censoring_rate > 0.0 && self.censoring_rate < 1.0) {
            return Err(Error::Config(format!(
                "censoring rate must lie in (0, 1), got {}",
                self.censoring_rate
            )));
        }
        if !(self.shape > 0.0) || !self.log_hr.is_finite() {
            return Err(Error::Config("shape must be positive and log HR finite".into()));
        }
        if self.nsim == 0 || self.k == 0 {
            return Err(Error::Config("nsim and K must be positive".into()));
        }
        Ok(())
    }

    /// Key of the data-generating parameters.
    fn data_key(&self) -> u64 {
        let mut h = splitmix64(self.seed);
        for v in [
            self.n as u64,
            self.censoring_rate.to_bits(),
            self.log_hr.to_bits(),
            self.shape.to_bits(),
        ] {
            h = splitmix64(h ^ v);
        }
        h
    }

    /// Seed of replication `rep`.
    pub fn replication_seed(&self, rep: usize) -> u64 {
        splitmix64(self.data_key().wrapping_add(rep as u64))
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `∫₀ᵇ f`, split at powers of ten so long ranges stay accurate.
fn integrate_split<F: Fn(f64) -> f64 + Copy>(f: F, b: f64) -> f64 {
    let mut total = 0.0;
    let mut lo = 0.0;
    let mut hi = b.min(1e-3);
    loop {
        total += quadrature::double_exponential::integrate(f, lo, hi, 1e-12).integral;
        if hi >= b {
            break;
        }
        lo = hi;
        hi = (hi * 10.0).min(b);
    }
    total
}

/// Expected censored fraction `P(C < T) = (1/b) ∫₀ᵇ S_mix(c) dc` for `C ~ U(0, b)`.
pub fn expected_censoring(shape: f64, log_hr: f64, b: f64) -> f64 {
    let hr = log_hr.exp();
    let s_mix = move |c: f64| {
        let base = c.powf(shape);
        0.5 * ((-base).exp() + (-hr * base).exp())
    };
    integrate_split(s_mix, b) / b
}

/// Upper bound `b` of the uniform censoring distribution giving the target rate.
pub fn calibrate_censoring(scenario: &Scenario) -> Result<f64> {
    let target = scenario.censoring_rate;
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Unattainable(target));
    }
    let f = |log_b: f64| expected_censoring(scenario.shape, scenario.log_hr, log_b.exp()) - target;
    let (mut lo, mut hi) = (-30.0f64, 40.0f64);
    let (flo, fhi) = (f(lo), f(hi));
    if !(flo > 0.0 && fhi < 0.0) {
        return Err(Error::Unattainable(target));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Data-generating coefficients on a time grid: intercept `a·ln t₁`, treatment
/// `log HR`, then `a·(ln t_k − ln t₁)` for the remaining grid points.
pub fn true_coefficients(scenario: &Scenario, grid: &[f64]) -> Vec<f64> {
    let a = scenario.shape;
    let l1 = grid[0].ln();
    let mut beta = vec![a * l1, scenario.log_hr];
    beta.extend(grid[1..].iter().map(|t| a * (t.ln() - l1)));
    beta
}

/// One simulated trial: arms `n/2` each (shuffled), Weibull event times with
/// `S(t | x) = exp(−e^{β x} t^a)`, censoring `C ~ U(0, b_cal)`.
pub fn generate_trial(scenario: &Scenario, b_cal: f64, seed: u64) -> Result<SurvivalDataset> {
    let n = scenario.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut arm: Vec<u8> = (0..n).map(|i| u8::from(i >= n / 2)).collect();
    arm.shuffle(&mut rng);
    let mut time = Vec::with_capacity(n);
    let mut event = Vec::with_capacity(n);
    for &x in &arm {
        let u: f64 = rng.sample(Open01);
        let t = (-u.ln() * (-scenario.log_hr * f64::from(x)).exp()).powf(1.0 / scenario.shape);
        let c = b_cal * rng.sample::<f64, _>(Open01);
        time.push(t.min(c));
        event.push(t <= c);
    }
    SurvivalDataset::new(time, event, arm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    pub methods: Vec<Method>,
    /// Chains for the Bayesian GMM.
    pub mcmc: McmcConfig,
    /// Chains for the piecewise exponential model.
    pub pem_mcmc: McmcConfig,
    pub point: PointEstimate,
    pub level: f64,
    /// Worker threads for replications; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            methods: vec![Method::Cox, Method::Gee, Method::Gmm],
            mcmc: McmcConfig::default(),
            pem_mcmc: McmcConfig::default(),
            point: PointEstimate::Mean,
            level: 0.95,
            threads: None,
        }
    }
}

impl SimSettings {
    /// Chain lengths used for desk-scale runs. Both are longer than the
    /// 3×5000 default after thinning because a random-walk sampler mixes more
    /// slowly than gradient-based samplers; the piecewise exponential model has
    /// up to 21 parameters and gets the longest chains.
    pub fn desk_scale(methods: Vec<Method>) -> Self {
        Self {
            methods,
            mcmc: McmcConfig {
                iterations: 10_000,
                warmup: 2_000,
                thin: 5,
                ..McmcConfig::default()
            },
            pem_mcmc: McmcConfig {
                iterations: 40_000,
                warmup: 2_000,
                thin: 20,
                ..McmcConfig::default()
            },
            ..Self::default()
        }
    }
}

/// Fit of one method on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub rep: usize,
    pub seed: u64,
    pub method: Method,
    pub estimate: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
    pub converged: bool,
    pub max_rhat: Option<f64>,
    pub censored_fraction: f64,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: Method,
    pub n: usize,
    pub censoring_rate: f64,
    pub log_hr: f64,
    pub k: usize,
    pub correlation: CorrelationKind,
    pub nsim: usize,
    pub used: usize,
    pub failures: usize,
    pub bias: f64,
    pub bias_mcse: f64,
    pub ase: f64,
    pub ase_mcse: f64,
    pub rmse: f64,
    pub rmse_mcse: f64,
    pub coverage: f64,
    pub coverage_mcse: f64,
    /// More than 5% of replications failed.
    pub flagged: bool,
    pub point: PointEstimate,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub b_cal: f64,
    pub realized_censoring: f64,
    pub rows: Vec<MetricsRow>,
    pub records: Vec<ReplicateRecord>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Aggregates the records of one method.
pub fn metrics(scenario: &Scenario, method: Method, records: &[ReplicateRecord], point: PointEstimate) -> MetricsRow {
    let ok: Vec<&ReplicateRecord> = records
        .iter()
        .filter(|r| r.method == method && r.converged)
        .collect();
    let total = records.iter().filter(|r| r.method == method).count();
    let failures = total - ok.len();
    let m = ok.len() as f64;
    let truth = scenario.log_hr;
    let est: Vec<f64> = ok.iter().map(|r| r.estimate).collect();
    let se: Vec<f64> = ok.iter().map(|r| r.se).collect();
    let sq: Vec<f64> = est.iter().map(|e| (e - truth).powi(2)).collect();
    let cover: Vec<f64> = ok
        .iter()
        .map(|r| f64::from(u8::from(r.lower <= truth && truth <= r.upper)))
        .collect();
    let (bias, ase, mse, coverage) = if ok.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
    } else {
        (mean(&est) - truth, mean(&se), mean(&sq), mean(&cover))
    };
    let rmse = mse.sqrt();
    MetricsRow {
        method,
        n: scenario.n,
        censoring_rate: scenario.censoring_rate,
        log_hr: truth,
        k: scenario.k,
        correlation: scenario.correlation,
        nsim: total,
        used: ok.len(),
        failures,
        bias,
        bias_mcse: sd(&est) / m.sqrt(),
        ase,
        ase_mcse: sd(&se) / m.sqrt(),
        rmse,
        rmse_mcse: if rmse > 0.0 { sd(&sq) / m.sqrt() / (2.0 * rmse) } else { 0.0 },
        coverage,
        coverage_mcse: (coverage * (1.0 - coverage) / m).sqrt(),
        flagged: total > 0 && failures as f64 > 0.05 * total as f64,
        point,
    }
}

fn frequentist_record(rep: usize, seed: u64, method: Method, cens: f64, fit: Result<FitResult>, idx: usize, level: f64) -> ReplicateRecord {
    match fit {
        Ok(f) => {
            let (lower, upper) = wald_interval(&f, level)[idx];
            ReplicateRecord {
                rep,
                seed,
                method,
                estimate: f.beta[idx],
                se: f.se[idx],
                lower,
                upper,
                converged: f.converged && f.se[idx].is_finite(),
                max_rhat: None,
                censored_fraction: cens,
                message: f.message,
            }
        }
        Err(e) => failed_record(rep, seed, method, cens, e),
    }
}

fn failed_record(rep: usize, seed: u64, method: Method, cens: f64, e: Error) -> ReplicateRecord {
    ReplicateRecord {
        rep,
        seed,
        method,
        estimate: f64::NAN,
        se: f64::NAN,
        lower: f64::NAN,
        upper: f64::NAN,
        converged: false,
        max_rhat: None,
        censored_fraction: cens,
        message: Some(e.to_string()),
    }
}

fn bayes_record(
    rep: usize,
    seed: u64,
    method: Method,
    cens: f64,
    summary: &crate::mcmc::ParamSummary,
    flagged: bool,
    max_rhat: f64,
    point: PointEstimate,
) -> ReplicateRecord {
    ReplicateRecord {
        rep,
        seed,
        method,
        estimate: match point {
            PointEstimate::Mean => summary.mean,
            PointEstimate::Median => summary.median,
        },
        se: summary.sd,
        lower: summary.lower,
        upper: summary.upper,
        converged: !flagged,
        max_rhat: Some(max_rhat),
        censored_fraction: cens,
        message: flagged.then(|| format!("max R-hat {max_rhat:.4}")),
    }
}

/// Fits every requested method on one replication.
pub fn run_replication(scenario: &Scenario, b_cal: f64, rep: usize, settings: &SimSettings) -> Result<Vec<ReplicateRecord>> {
    let seed = scenario.replication_seed(rep);
    let data = generate_trial(scenario, b_cal, seed)?;
    let cens = data.censoring_fraction();
    let level = settings.level;
    let needs_pseudo = settings
        .methods
        .iter()
        .any(|m| matches!(m, Method::Gee | Method::Gmm | Method::BayesGmm));
    let pseudo = if needs_pseudo {
        select_time_grid_with(&data, scenario.k, scenario.grid_rule).and_then(|grid| {
            let y = pseudo_observations(&data, &grid)?;
            let x = build_design(&data, &grid)?;
            Ok((y, x))
        })
    } else {
        Err(Error::Config("unused".into()))
    };
    let mcmc = McmcConfig {
        seed: splitmix64(seed ^ 0x5EED),
        ..settings.mcmc.clone()
    };
    let pem_mcmc = McmcConfig {
        seed: splitmix64(seed ^ 0x9E3),
        ..settings.pem_mcmc.clone()
    };
    let mut out = Vec::with_capacity(settings.methods.len());
    for &method in &settings.methods {
        let rec = match method {
            Method::Cox => frequentist_record(rep, seed, method, cens, fit_cox(&data, &[]), 0, level),
            Method::Gee | Method::Gmm => match &pseudo {
                Ok((y, x)) => {
                    let fit = if method == Method::Gee {
                        WorkingCorrelation::new(scenario.correlation, x.k(), None).and_then(|wc| fit_gee(y, x, &wc))
                    } else {
                        fit_gmm(y, x, &BasisSet::new(scenario.correlation, x.k()))
                    };
                    frequentist_record(rep, seed, method, cens, fit, 1, level)
                }
                Err(e) => failed_record(rep, seed, method, cens, e.clone()),
            },
            Method::BayesGmm => match &pseudo {
                Ok((y, x)) => {
                    let basis = BasisSet::new(scenario.correlation, x.k());
                    let prior = PriorSpec::default_for(x.n(), x.p());
                    let opts = BayesGmmOptions { level, ..BayesGmmOptions::default() };
                    match fit_bayes_gmm(y, x, &basis, &prior, &mcmc, &opts) {
                        Ok(f) => bayes_record(
                            rep,
                            seed,
                            method,
                            cens,
                            &f.summary.params[1],
                            f.flagged,
                            f.draws.max_rhat(),
                            settings.point,
                        ),
                        Err(e) => failed_record(rep, seed, method, cens, e),
                    }
                }
                Err(e) => failed_record(rep, seed, method, cens, e.clone()),
            },
            Method::Pem => match fit_pem(&data, PemSpec::from_data(&data), &pem_mcmc, &[]) {
                Ok(f) => bayes_record(
                    rep,
                    seed,
                    method,
                    cens,
                    f.coefficient(0),
                    f.flagged,
                    f.draws.max_rhat(),
                    settings.point,
                ),
                Err(e) => failed_record(rep, seed, method, cens, e),
            },
        };
        out.push(rec);
    }
    Ok(out)
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

pub fn run_scenario(scenario: &Scenario, settings: &SimSettings) -> Result<ScenarioResult> {
    scenario.validate()?;
    if settings.methods.is_empty() {
        return Err(Error::Config("method list is empty".into()));
    }
    let b_cal = calibrate_censoring(scenario)?;
    let per_rep: Vec<Vec<ReplicateRecord>> = in_pool(settings.threads, || {
        (0..scenario.nsim)
            .into_par_iter()
            .map(|rep| run_replication(scenario, b_cal, rep, settings))
            .collect::<Result<Vec<_>>>()
    })??;
    let records: Vec<ReplicateRecord> = per_rep.into_iter().flatten().collect();
    let rows = settings
        .methods
        .iter()
        .map(|&m| metrics(scenario, m, &records, settings.point))
        .collect();
    let first = settings.methods[0];
    let cens: Vec<f64> = records
        .iter()
        .filter(|r| r.method == first)
        .map(|r| r.censored_fraction)
        .collect();
    Ok(ScenarioResult {
        scenario: scenario.clone(),
        b_cal,
        realized_censoring: mean(&cens),
        rows,
        records,
    })
}

/// Analysis knob varied by a sensitivity run.
#[derive(Debug, Clone, PartialEq)]
pub enum Knob {
    K(Vec<usize>),
    Correlation(Vec<CorrelationKind>),
}

/// Reruns the base scenario once per knob value on the same datasets.
pub fn sensitivity_grid(base: &Scenario, settings: &SimSettings, knob: &Knob) -> Result<Vec<ScenarioResult>> {
    let scenarios: Vec<Scenario> = match knob {
        Knob::K(ks) => ks.iter().map(|&k| Scenario { k, ..base.clone() }).collect(),
        Knob::Correlation(kinds) => kinds
            .iter()
            .map(|&correlation| Scenario { correlation, ..base.clone() })
            .collect(),
    };
    scenarios.iter().map(|s| run_scenario(s, settings)).collect()
}

/// Named scenario grids.
pub fn scenario_grid(name: &str, base: &Scenario) -> Result<(Vec<Scenario>, Option<Knob>)> {
    let with = |f: &dyn Fn(&mut Scenario)| {
        let mut s = base.clone();
        f(&mut s);
        s
    };
    match name {
        "core" => Ok((vec![base.clone()], None)),
        "table1" => Ok((
            [50, 100, 200, 500, 1000].iter().map(|&n| with(&|s| s.n = n)).collect(),
            None,
        )),
        "table2" => Ok((
            [0.05, 0.1, 0.2, 0.3, 0.7]
                .iter()
                .map(|&c| with(&|s| s.censoring_rate = c))
                .collect(),
            None,
        )),
        "table3" => Ok(([-0.1, -0.3, -0.5].iter().map(|&b| with(&|s| s.log_hr = b)).collect(), None)),
        "table4" => Ok((
            vec![base.clone()],
            Some(Knob::Correlation(vec![CorrelationKind::Ind, CorrelationKind::Exch, CorrelationKind::Ar1])),
        )),
        "ksens" => Ok((vec![base.clone()], Some(Knob::K(vec![5, 7, 10])))),
        other => Err(Error::Config(format!(
            "unknown grid '{other}'; allowed grids: core, table1, table2, table3, table4, ksens"
        ))),
    }
}

pub const METRICS_HEADER: &str = "method,n,censoring_rate,log_hr,k,correlation,nsim,used,failures,bias,bias_mcse,ase,ase_mcse,rmse,rmse_mcse,coverage,coverage_mcse,flagged,point";

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
            self.method.tag(),
            self.n,
            self.censoring_rate,
            self.log_hr,
            self.k,
            self.correlation.label(),
            self.nsim,
            self.used,
            self.failures,
            self.bias,
            self.bias_mcse,
            self.ase,
            self.ase_mcse,
            self.rmse,
            self.rmse_mcse,
            self.coverage,
            self.coverage_mcse,
            self.flagged,
            match self.point {
                PointEstimate::Mean => "mean",
                PointEstimate::Median => "median",
            }
        )
    }
}

/// Human-readable table with Frequentist and Bayesian groups per scenario.
pub fn format_table(results: &[ScenarioResult]) -> String {
    let mut out = String::new();
    for r in results {
        let s = &r.scenario;
        let _ = writeln!(
            out,
            "n = {}, censoring = {:.0}% (realized {:.1}%), log HR = {}, K = {}, {}",
            s.n,
            100.0 * s.censoring_rate,
            100.0 * r.realized_censoring,
            s.log_hr,
            s.k,
            s.correlation.label()
        );
        let _ = writeln!(
            out,
            "  {:<14}{:>10}{:>10}{:>10}{:>11}{:>10}",
            "Method", "Bias", "ASE", "RMSE", "Coverage", "Failed"
        );
        for (group, bayes) in [("Frequentist", false), ("Bayesian", true)] {
            let rows: Vec<&MetricsRow> = r.rows.iter().filter(|m| m.method.is_bayesian() == bayes).collect();
            if rows.is_empty() {
                continue;
            }
            let _ = writeln!(out, "  {group}");
            for m in rows {
                let _ = writeln!(
                    out,
                    "    {:<12}{:>10.4}{:>10.3}{:>10.3}{:>10.1}%{:>7}/{}{}",
                    m.method.label(),
                    m.bias,
                    m.ase,
                    m.rmse,
                    100.0 * m.coverage,
                    m.failures,
                    m.nsim,
                    if m.flagged { " *" } else { "" }
                );
            }
        }
        out.push('\n');
    }
    out
}
