//! Bayesian GMM: posterior sampling from the moment-based pseudo-likelihood
//! `L̃(β) ∝ exp(−½ U_nᵀ Σ_n⁻¹ U_n)` with `Σ_n = C_n − (1/n) U_n U_nᵀ`.
//!
//! The pseudo-likelihood is only defined where `Σ_n` is positive definite;
//! outside that region the log density reports "out of support" and the
//! sampler rejects the proposal.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{DesignMatrix, LinkCloglog};
use crate::gmm::{BasisSet, MomentStats};
use crate::linalg::{cholesky_checked, ols};
use crate::mcmc::{self, LogDensity, McmcConfig, PosteriorDraws, PosteriorSummary, TailQuery};
use crate::pseudo::PseudoObsMatrix;
use crate::{Error, Result};

/// Reciprocal-condition floor below which `Σ_n` counts as singular.
pub const SIGMA_RCOND_FLOOR: f64 = 1e-12;

/// Truncation levels used for the three default chain initialisations.
pub const DEFAULT_EPSILONS: [f64; 3] = [0.01, 0.05, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Prior {
    Normal { sd: f64 },
    Cauchy { scale: f64 },
}

impl Prior {
    fn log_density(&self, x: f64) -> f64 {
        match *self {
            Prior::Normal { sd } => -0.5 * (x / sd).powi(2) - sd.ln(),
            Prior::Cauchy { scale } => -(1.0 + (x / scale).powi(2)).ln() - scale.ln(),
        }
    }

    /// Curvature of `−log p` at zero, used to scale the initial proposal.
    fn precision(&self) -> f64 {
        match *self {
            Prior::Normal { sd } => 1.0 / (sd * sd),
            Prior::Cauchy { scale } => 2.0 / (scale * scale),
        }
    }

    fn scale(&self) -> f64 {
        match *self {
            Prior::Normal { sd } => sd,
            Prior::Cauchy { scale } => scale,
        }
    }
}

/// Independent priors, one per coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub priors: Vec<Prior>,
}

impl PriorSpec {
    pub fn uniform(prior: Prior, p: usize) -> Result<Self> {
        let spec = Self { priors: vec![prior; p] };
        spec.validate()?;
        Ok(spec)
    }

    /// `N(0, 1)` for every coefficient when `n ≤ 100`, `N(0, 10²)` otherwise.
    pub fn default_for(n: usize, p: usize) -> Self {
        let sd = if n <= 100 { 1.0 } else { 10.0 };
        Self { priors: vec![Prior::Normal { sd }; p] }
    }

    pub fn validate(&self) -> Result<()> {
        for (j, pr) in self.priors.iter().enumerate() {
            let s = pr.scale();
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Config(format!("prior scale of coefficient {j} must be positive, got {s}")));
            }
        }
        Ok(())
    }

    pub fn log_density(&self, beta: &[f64]) -> f64 {
        self.priors.iter().zip(beta).map(|(p, &b)| p.log_density(b)).sum()
    }
}

/// `U_n` and `Σ_n` at one coefficient vector.
#[derive(Debug, Clone)]
pub struct SigmaState {
    pub un: DVector<f64>,
    pub cn: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub saturated: bool,
}

/// The pseudo-likelihood bound to one dataset, design and basis.
#[derive(Debug, Clone)]
pub struct PseudoLikelihood<'a> {
    pub y: &'a PseudoObsMatrix,
    pub x: &'a DesignMatrix,
    pub basis: &'a BasisSet,
    stats: MomentStats,
}

impl<'a> PseudoLikelihood<'a> {
    pub fn new(y: &'a PseudoObsMatrix, x: &'a DesignMatrix, basis: &'a BasisSet) -> Result<Self> {
        if y.n() != x.n() || y.k() != x.k() || basis.k() != x.k() {
            return Err(Error::Dimension(format!(
                "pseudo-observations {}×{}, design K = {}, basis K = {}",
                y.n(),
                y.k(),
                x.k(),
                basis.k()
            )));
        }
        Ok(Self {
            y,
            x,
            basis,
            stats: MomentStats::new(y, x),
        })
    }

    pub fn dim(&self) -> usize {
        self.x.p()
    }

    pub fn sigma(&self, beta: &[f64]) -> SigmaState {
        let mo = self.stats.moments(beta, self.basis, false);
        let n = self.x.n() as f64;
        let mut sigma = &mo.cn - (&mo.un * mo.un.transpose()) / n;
        crate::linalg::symmetrize(&mut sigma);
        SigmaState {
            un: mo.un,
            cn: mo.cn,
            sigma,
            saturated: mo.saturated,
        }
    }

    /// `−½ U_nᵀ Σ_n⁻¹ U_n`, or `None` outside the support.
    pub fn log_value(&self, beta: &[f64]) -> Option<f64> {
        if beta.iter().any(|b| !b.is_finite()) {
            return None;
        }
        let s = self.sigma(beta);
        if s.saturated {
            return None;
        }
        let chol = cholesky_checked(&s.sigma, SIGMA_RCOND_FLOOR)?;
        let q = s.un.dot(&chol.solve(&s.un));
        q.is_finite().then_some(-0.5 * q)
    }
}

/// Log posterior: pseudo-likelihood plus independent priors.
pub struct BayesGmmTarget<'a> {
    pub likelihood: PseudoLikelihood<'a>,
    pub prior: &'a PriorSpec,
}

impl LogDensity for BayesGmmTarget<'_> {
    fn dim(&self) -> usize {
        self.likelihood.dim()
    }

    fn log_density(&self, x: &[f64]) -> Option<f64> {
        Some(self.likelihood.log_value(x)? + self.prior.log_density(x))
    }
}

/// Least-squares starting values: clamp pseudo-observations to `[ε, 1−ε]`,
/// apply the cloglog link, regress on the stacked design. The result is
/// biased by construction and only meant to place chains inside the support.
pub fn starting_values(y: &PseudoObsMatrix, x: &DesignMatrix, epsilon: f64) -> Result<DVector<f64>> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::Config(format!("epsilon must lie in (0, 0.5), got {epsilon}")));
    }
    if y.n() != x.n() || y.k() != x.k() {
        return Err(Error::Dimension("pseudo-observations and design disagree".into()));
    }
    let (n, k) = (y.n(), y.k());
    let z = DVector::from_fn(n * k, |r, _| {
        let v = y.values[(r / k, r % k)].clamp(epsilon, 1.0 - epsilon);
        LinkCloglog::link(v)
    });
    ols(&x.stacked(), &z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesGmmOptions {
    /// Truncation level per chain; reused cyclically when there are more chains.
    pub epsilons: Vec<f64>,
    pub level: f64,
    pub tails: Vec<TailQuery>,
    pub rhat_threshold: f64,
}

impl Default for BayesGmmOptions {
    fn default() -> Self {
        Self {
            epsilons: DEFAULT_EPSILONS.to_vec(),
            level: 0.95,
            tails: Vec::new(),
            rhat_threshold: 1.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BayesGmmFit {
    pub draws: PosteriorDraws,
    pub summary: PosteriorSummary,
    pub inits: Vec<Vec<f64>>,
    /// Some R-hat exceeds the threshold.
    pub flagged: bool,
    pub advice: Option<String>,
}

/// Serializable report of a Bayesian fit.
#[derive(Debug, Clone, Serialize)]
pub struct BayesGmmReport<'a> {
    pub basis: &'a str,
    pub epsilons: &'a [f64],
    pub priors: &'a PriorSpec,
    pub mcmc: &'a McmcConfig,
    pub summary: &'a PosteriorSummary,
    pub flagged: bool,
    pub advice: Option<&'a str>,
}

/// Initial proposal covariance from the curvature at `beta`, falling back to
/// `0.01·I` when the Gauss-Newton information is unusable.
fn initial_covariance(lik: &PseudoLikelihood, prior: &PriorSpec, beta: &[f64]) -> DMatrix<f64> {
    let p = beta.len();
    let fallback = DMatrix::identity(p, p) * 0.01;
    let mo = lik.stats.moments(beta, lik.basis, true);
    let n = lik.x.n() as f64;
    let sigma = &mo.cn - (&mo.un * mo.un.transpose()) / n;
    let Some(chol) = cholesky_checked(&sigma, SIGMA_RCOND_FLOOR) else {
        return fallback;
    };
    let jac = mo.jac.expect("jacobian requested");
    let mut info = jac.transpose() * chol.solve(&jac);
    for (j, pr) in prior.priors.iter().enumerate() {
        info[(j, j)] += pr.precision();
    }
    match crate::linalg::spd_inverse(&info, "proposal covariance") {
        Ok(c) if c.iter().all(|v| v.is_finite()) => c,
        _ => fallback,
    }
}

pub fn fit_bayes_gmm(
    y: &PseudoObsMatrix,
    x: &DesignMatrix,
    basis: &BasisSet,
    prior: &PriorSpec,
    config: &McmcConfig,
    options: &BayesGmmOptions,
) -> Result<BayesGmmFit> {
    let lik = PseudoLikelihood::new(y, x, basis)?;
    prior.validate()?;
    if prior.priors.len() != x.p() {
        return Err(Error::Dimension(format!("{} priors for {} coefficients", prior.priors.len(), x.p())));
    }
    if let Some(t) = options.tails.iter().find(|t| t.param >= x.p()) {
        return Err(Error::Config(format!("tail query on coefficient {} of {}", t.param, x.p())));
    }
    if options.epsilons.is_empty() {
        return Err(Error::Config("at least one epsilon is required".into()));
    }
    let inits: Vec<Vec<f64>> = (0..config.chains)
        .map(|c| starting_values(y, x, options.epsilons[c % options.epsilons.len()]).map(|v| v.as_slice().to_vec()))
        .collect::<Result<_>>()?;
    let anchor = &inits[config.chains / 2];
    let cov0 = initial_covariance(&lik, prior, anchor);
    let target = BayesGmmTarget { likelihood: lik, prior };
    let draws = mcmc::sample(&target, x.names().to_vec(), &inits, &cov0, config)?;
    let summary = mcmc::summarize(&draws, &options.tails, options.level);
    let flagged = draws.max_rhat() > options.rhat_threshold;
    let advice = flagged.then(|| {
        format!(
            "max R-hat {:.4} exceeds {}; rerun with different truncation levels (epsilon) for the starting values",
            draws.max_rhat(),
            options.rhat_threshold
        )
    });
    Ok(BayesGmmFit {
        draws,
        summary,
        inits,
        flagged,
        advice,
    })
}
