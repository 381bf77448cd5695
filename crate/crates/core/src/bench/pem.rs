//! Bayesian piecewise exponential model.
//!
//! The baseline hazard is constant on `M` intervals cut at event-time
//! quantiles. Sampling runs on `(log h_1 … log h_M, β)`; the likelihood is
//! evaluated from per-pattern sufficient statistics (event counts and exposure
//! per interval for every distinct regressor vector).

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::mcmc::{self, LogDensity, McmcConfig, PosteriorDraws, PosteriorSummary, TailQuery};
use crate::surv::SurvivalDataset;
use crate::{Error, Result};

/// `M = max{5, min(⌊r/8⌋, 20)}` for `r` observed events.
pub fn interval_count(events: usize) -> usize {
    (events / 8).clamp(5, 20)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PemSpec {
    /// Interior cut points `0 < c_1 < … < c_{M−1}`; the last interval is open.
    pub cuts: Vec<f64>,
    /// Rate of the Gamma(1, rate) prior on each hazard.
    pub hazard_prior_rate: f64,
    /// Prior standard deviation of each log hazard ratio.
    pub beta_sd: f64,
    pub treatment: bool,
    pub covariates: Vec<usize>,
}

impl PemSpec {
    /// Cut points at event-time quantiles with the default interval count,
    /// `ĥ` = events / total follow-up, `β ~ N(0, 10⁵)`.
    pub fn from_data(data: &SurvivalDataset) -> Self {
        Self::with_intervals(data, interval_count(data.n_events()))
    }

    pub fn with_intervals(data: &SurvivalDataset, m: usize) -> Self {
        let m = m.max(1);
        let ev: Vec<f64> = data
            .order()
            .iter()
            .filter(|&&i| data.event()[i])
            .map(|&i| data.time()[i])
            .collect();
        let r = ev.len();
        let max_time = data.order().last().map(|&i| data.time()[i]).unwrap_or(0.0);
        let mut cuts: Vec<f64> = (1..m)
            .map(|j| ev[((j * r).div_ceil(m)).clamp(1, r) - 1])
            .filter(|&c| c < max_time)
            .collect();
        cuts.dedup();
        let follow_up: f64 = data.time().iter().sum();
        Self {
            cuts,
            hazard_prior_rate: r as f64 / follow_up,
            beta_sd: 10f64.powf(2.5),
            treatment: true,
            covariates: Vec::new(),
        }
    }

    pub fn intervals(&self) -> usize {
        self.cuts.len() + 1
    }

    fn validate(&self) -> Result<()> {
        if self.cuts.windows(2).any(|w| !(w[0] < w[1])) || self.cuts.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::Config("PEM cut points must be positive and strictly increasing".into()));
        }
        if !(self.hazard_prior_rate > 0.0 && self.beta_sd > 0.0) {
            return Err(Error::Config("PEM prior parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Sufficient statistics of the piecewise exponential likelihood.
#[derive(Debug, Clone)]
pub struct PemPosterior {
    pub spec: PemSpec,
    pub names: Vec<String>,
    /// Distinct regressor vectors.
    patterns: Vec<DVector<f64>>,
    /// `events[g][m]`
    events: Vec<Vec<f64>>,
    /// `exposure[g][m]`
    exposure: Vec<Vec<f64>>,
    /// Events per interval summed over patterns.
    pub interval_events: Vec<f64>,
    pub interval_exposure: Vec<f64>,
    pub total_events: usize,
}

fn interval_of(cuts: &[f64], t: f64) -> usize {
    cuts.partition_point(|&c| c < t)
}

impl PemPosterior {
    /// Builds the statistics, merging intervals without exposure into their
    /// left neighbour. Returns warnings for every merge.
    pub fn new(data: &SurvivalDataset, spec: PemSpec) -> Result<(Self, Vec<String>)> {
        spec.validate()?;
        let mut spec = spec;
        let mut warnings = Vec::new();
        loop {
            let m = spec.intervals();
            let mut exp_m = vec![0.0; m];
            for &t in data.time() {
                add_exposure(&spec.cuts, t, 1.0, &mut exp_m);
            }
            match exp_m.iter().position(|&e| e <= 0.0) {
                Some(j) if m > 1 => {
                    let drop = if j == 0 { 0 } else { j - 1 };
                    warnings.push(format!(
                        "interval {} has no exposure and was merged with its neighbour",
                        j + 1
                    ));
                    spec.cuts.remove(drop);
                }
                _ => break,
            }
        }
        let (z, reg_names) = super::regressors(data, spec.treatment, &spec.covariates)?;
        let m = spec.intervals();
        let mut patterns: Vec<DVector<f64>> = Vec::new();
        let mut events: Vec<Vec<f64>> = Vec::new();
        let mut exposure: Vec<Vec<f64>> = Vec::new();
        for i in 0..data.len() {
            let zi = z.row(i).transpose();
            let g = match patterns.iter().position(|p| *p == zi) {
                Some(g) => g,
                None => {
                    patterns.push(zi);
                    events.push(vec![0.0; m]);
                    exposure.push(vec![0.0; m]);
                    patterns.len() - 1
                }
            };
            let t = data.time()[i];
            add_exposure(&spec.cuts, t, 1.0, &mut exposure[g]);
            if data.event()[i] {
                events[g][interval_of(&spec.cuts, t)] += 1.0;
            }
        }
        let interval_events = (0..m).map(|j| events.iter().map(|e| e[j]).sum()).collect();
        let interval_exposure = (0..m).map(|j| exposure.iter().map(|e| e[j]).sum()).collect();
        let mut names: Vec<String> = (1..=m).map(|j| format!("log_h{j}")).collect();
        names.extend(reg_names);
        Ok((
            Self {
                spec,
                names,
                patterns,
                events,
                exposure,
                interval_events,
                interval_exposure,
                total_events: data.n_events(),
            },
            warnings,
        ))
    }

    pub fn intervals(&self) -> usize {
        self.spec.intervals()
    }

    pub fn regressors(&self) -> usize {
        self.names.len() - self.intervals()
    }

    /// Log likelihood at hazards `exp(log_h)` and coefficients `beta`.
    pub fn log_likelihood(&self, log_h: &[f64], beta: &[f64]) -> f64 {
        let mut ll = 0.0;
        for (g, zg) in self.patterns.iter().enumerate() {
            let lin: f64 = zg.iter().zip(beta).map(|(a, b)| a * b).sum();
            let w = lin.exp();
            for (m, &lh) in log_h.iter().enumerate() {
                let d = self.events[g][m];
                if d > 0.0 {
                    ll += d * (lh + lin);
                }
                ll -= w * lh.exp() * self.exposure[g][m];
            }
        }
        ll
    }

    /// Gradient and Hessian of the log posterior on the sampling scale.
    fn derivatives(&self, theta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let m = self.intervals();
        let q = self.regressors();
        let (lh, beta) = theta.split_at(m);
        let mut grad = DVector::zeros(m + q);
        let mut hess = DMatrix::zeros(m + q, m + q);
        for (g, zg) in self.patterns.iter().enumerate() {
            let lin: f64 = zg.iter().zip(beta).map(|(a, b)| a * b).sum();
            for j in 0..m {
                let w = (lin + lh[j]).exp() * self.exposure[g][j];
                let d = self.events[g][j];
                grad[j] += d - w;
                hess[(j, j)] -= w;
                for a in 0..q {
                    grad[m + a] += (d - w) * zg[a];
                    hess[(j, m + a)] -= w * zg[a];
                    hess[(m + a, j)] -= w * zg[a];
                    for b in 0..q {
                        hess[(m + a, m + b)] -= w * zg[a] * zg[b];
                    }
                }
            }
        }
        let rate = self.spec.hazard_prior_rate;
        for j in 0..m {
            let h = lh[j].exp();
            grad[j] += 1.0 - rate * h;
            hess[(j, j)] -= rate * h;
        }
        let prec = 1.0 / (self.spec.beta_sd * self.spec.beta_sd);
        for a in 0..q {
            grad[m + a] -= prec * beta[a];
            hess[(m + a, m + a)] -= prec;
        }
        (grad, hess)
    }

    /// Posterior mode by damped Newton and the inverse negative Hessian there.
    pub fn laplace(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let m = self.intervals();
        let q = self.regressors();
        let rate = self.spec.hazard_prior_rate;
        let mut theta = DVector::zeros(m + q);
        for j in 0..m {
            theta[j] = ((self.interval_events[j] + 1.0) / (self.interval_exposure[j] + rate)).ln();
        }
        let value = |t: &DVector<f64>| self.log_density(t.as_slice()).unwrap_or(f64::NEG_INFINITY);
        let mut cur = value(&theta);
        for _ in 0..100 {
            let (grad, hess) = self.derivatives(theta.as_slice());
            if grad.amax() < 1e-9 {
                break;
            }
            let neg = -hess;
            let step = neg
                .cholesky()
                .ok_or_else(|| Error::Singular("PEM posterior curvature".into()))?
                .solve(&grad);
            let mut t = 1.0;
            loop {
                let cand = &theta + t * &step;
                let v = value(&cand);
                if v >= cur || t < 1e-10 {
                    theta = cand;
                    cur = v;
                    break;
                }
                t *= 0.5;
            }
        }
        let (_, hess) = self.derivatives(theta.as_slice());
        let cov = crate::linalg::spd_inverse(&(-hess), "PEM posterior curvature")?;
        Ok((theta, cov))
    }

    /// Log prior on the sampling scale, including the log-transform Jacobian.
    pub fn log_prior(&self, log_h: &[f64], beta: &[f64]) -> f64 {
        let rate = self.spec.hazard_prior_rate;
        let hz: f64 = log_h.iter().map(|&lh| lh - rate * lh.exp()).sum();
        let sd = self.spec.beta_sd;
        hz - 0.5 * beta.iter().map(|b| (b / sd).powi(2)).sum::<f64>()
    }
}

/// Adds the time spent by a subject followed up to `t` in each interval.
fn add_exposure(cuts: &[f64], t: f64, weight: f64, out: &mut [f64]) {
    let mut lo = 0.0;
    for (m, slot) in out.iter_mut().enumerate() {
        let hi = cuts.get(m).copied().unwrap_or(f64::INFINITY);
        if t <= lo {
            break;
        }
        *slot += weight * (t.min(hi) - lo);
        lo = hi;
    }
}

impl LogDensity for PemPosterior {
    fn dim(&self) -> usize {
        self.names.len()
    }

    fn log_density(&self, x: &[f64]) -> Option<f64> {
        let (lh, beta) = x.split_at(self.intervals());
        let v = self.log_likelihood(lh, beta) + self.log_prior(lh, beta);
        v.is_finite().then_some(v)
    }
}

#[derive(Debug, Clone)]
pub struct PemFit {
    pub posterior: PemPosterior,
    pub draws: PosteriorDraws,
    pub summary: PosteriorSummary,
    pub warnings: Vec<String>,
    pub flagged: bool,
}

impl PemFit {
    /// Summary of the first regression coefficient (the treatment effect by default).
    pub fn coefficient(&self, j: usize) -> &crate::mcmc::ParamSummary {
        &self.summary.params[self.posterior.intervals() + j]
    }
}

pub fn fit_pem(
    data: &SurvivalDataset,
    spec: PemSpec,
    config: &McmcConfig,
    tails: &[TailQuery],
) -> Result<PemFit> {
    let (post, warnings) = PemPosterior::new(data, spec)?;
    let m = post.intervals();
    if let Some(t) = tails.iter().find(|t| t.param >= post.regressors()) {
        return Err(Error::Config(format!(
            "tail query on coefficient {} but the model has {}",
            t.param,
            post.regressors()
        )));
    }
    // chains start at the posterior mode with the coefficients spread apart
    let (mode, cov0) = post.laplace()?;
    let inits: Vec<Vec<f64>> = (0..config.chains)
        .map(|c| {
            let mut v = mode.as_slice().to_vec();
            for b in &mut v[m..] {
                *b += (c as f64 - 1.0) * 0.2;
            }
            v
        })
        .collect();
    // the Laplace covariance is already a good proposal shape
    let config = McmcConfig {
        adapt_covariance: false,
        ..config.clone()
    };
    let draws = mcmc::sample(&post, post.names.clone(), &inits, &cov0, &config)?;
    // tail queries index regression coefficients
    let shifted: Vec<TailQuery> = tails
        .iter()
        .map(|t| TailQuery { param: t.param + m, ..*t })
        .collect();
    let summary = mcmc::summarize(&draws, &shifted, 0.95);
    let flagged = draws.max_rhat() > 1.01;
    Ok(PemFit {
        posterior: post,
        draws,
        summary,
        warnings,
        flagged,
    })
}
