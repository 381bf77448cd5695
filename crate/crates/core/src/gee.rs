//! Generalized estimating equations for pseudo-observations.
//!
//! Identity working variance, cloglog mean, Fisher scoring for `β` alternated
//! with moment updates of the working-correlation parameter, and the robust
//! sandwich covariance `Γ₀⁻¹Γ₁Γ₀⁻¹/n`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{DesignMatrix, LinkCloglog};
use crate::fit::{CorrelationInfo, FitResult};
use crate::linalg::{spd_inverse, symmetrize};
use crate::pseudo::PseudoObsMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, Hash)]
#[serde(rename_all = "UPPERCASE")]
pub enum CorrelationKind {
    #[default]
    Ind,
    Exch,
    Ar1,
}

impl CorrelationKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::Ind => "IND",
            Self::Exch => "EXCH",
            Self::Ar1 => "AR1",
        }
    }
}

impl std::fmt::Display for CorrelationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for CorrelationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace(['-', '_'], "").as_str() {
            "IND" | "INDEPENDENCE" => Ok(Self::Ind),
            "EXCH" | "EXCHANGEABLE" => Ok(Self::Exch),
            "AR1" => Ok(Self::Ar1),
            _ => Err(Error::Config(format!(
                "unknown correlation '{s}' (expected IND, EXCH or AR1)"
            ))),
        }
    }
}

/// Working correlation `R(α)` of dimension `K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkingCorrelation {
    pub kind: CorrelationKind,
    pub k: usize,
    pub alpha: Option<f64>,
}

impl WorkingCorrelation {
    pub fn new(kind: CorrelationKind, k: usize, alpha: Option<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("working correlation needs K >= 1".into()));
        }
        let alpha = match kind {
            CorrelationKind::Ind => None,
            _ => Some(alpha.unwrap_or(0.0)),
        };
        if let Some(a) = alpha {
            let (lo, hi) = Self::alpha_range(kind, k);
            if !(a > lo && a < hi) {
                return Err(Error::Config(format!(
                    "{kind} correlation parameter {a} outside ({lo}, {hi})"
                )));
            }
        }
        Ok(Self { kind, k, alpha })
    }

    pub fn independence(k: usize) -> Self {
        Self {
            kind: CorrelationKind::Ind,
            k,
            alpha: None,
        }
    }

    /// Open interval of admissible `α`.
    pub fn alpha_range(kind: CorrelationKind, k: usize) -> (f64, f64) {
        match kind {
            CorrelationKind::Ind => (0.0, 0.0),
            CorrelationKind::Exch if k > 1 => (-1.0 / (k as f64 - 1.0), 1.0),
            CorrelationKind::Exch => (-1.0, 1.0),
            CorrelationKind::Ar1 => (-1.0, 1.0),
        }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let a = self.alpha.unwrap_or(0.0);
        DMatrix::from_fn(self.k, self.k, |i, j| {
            if i == j {
                1.0
            } else {
                match self.kind {
                    CorrelationKind::Ind => 0.0,
                    CorrelationKind::Exch => a,
                    CorrelationKind::Ar1 => a.powi((i as i32 - j as i32).abs()),
                }
            }
        })
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        spd_inverse(&self.matrix(), "working correlation")
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GeeOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Re-estimate `α` between β-steps; when false the supplied `α` is kept.
    pub estimate_alpha: bool,
}

impl Default for GeeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50,
            estimate_alpha: true,
        }
    }
}

struct Accum {
    /// Σ D'R⁻¹D
    bread: DMatrix<f64>,
    /// Σ D'R⁻¹ r
    score: DVector<f64>,
    /// Σ D'R⁻¹ r r' R⁻¹ D
    meat: DMatrix<f64>,
}

fn check_dims(y: &PseudoObsMatrix, x: &DesignMatrix) -> Result<()> {
    if y.n() != x.n() || y.k() != x.k() {
        return Err(Error::Dimension(format!(
            "pseudo-observations are {}×{}, design has {} blocks of {} rows",
            y.n(),
            y.k(),
            x.n(),
            x.k()
        )));
    }
    Ok(())
}

/// Per-subject residuals `y_i − μ_i` and Jacobians `D_i` at `beta`.
pub(crate) fn subject_terms(
    y: &PseudoObsMatrix,
    x: &DesignMatrix,
    i: usize,
    beta: &[f64],
    resid: &mut DVector<f64>,
    jac: &mut DMatrix<f64>,
) {
    let (k, p) = (x.k(), x.p());
    let block = x.block_slice(i);
    for r in 0..k {
        let row = &block[r * p..(r + 1) * p];
        let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
        let mu = LinkCloglog::inverse(eta);
        let dmu = LinkCloglog::inverse_deriv(eta);
        resid[r] = y.values[(i, r)] - mu;
        for c in 0..p {
            jac[(r, c)] = dmu * row[c];
        }
    }
}

fn accumulate(y: &PseudoObsMatrix, x: &DesignMatrix, beta: &[f64], rinv: &DMatrix<f64>) -> Accum {
    let (k, p) = (x.k(), x.p());
    let mut acc = Accum {
        bread: DMatrix::zeros(p, p),
        score: DVector::zeros(p),
        meat: DMatrix::zeros(p, p),
    };
    let mut r = DVector::zeros(k);
    let mut d = DMatrix::zeros(k, p);
    for i in 0..x.n() {
        subject_terms(y, x, i, beta, &mut r, &mut d);
        let dt_rinv = d.transpose() * rinv;
        acc.bread += &dt_rinv * &d;
        let u = &dt_rinv * &r;
        acc.meat += &u * u.transpose();
        acc.score += u;
    }
    acc
}

/// GEE estimating function `(1/n) Σ D_i' R⁻¹ (y_i − μ_i)`.
pub fn gee_score(
    y: &PseudoObsMatrix,
    x: &DesignMatrix,
    beta: &DVector<f64>,
    rinv: &DMatrix<f64>,
) -> DVector<f64> {
    accumulate(y, x, beta.as_slice(), rinv).score / x.n() as f64
}

/// Moment estimate of `α` from residuals at `beta` (scale from Pearson residuals).
fn estimate_alpha(y: &PseudoObsMatrix, x: &DesignMatrix, beta: &[f64], kind: CorrelationKind) -> Option<f64> {
    let (n, k, p) = (x.n(), x.k(), x.p());
    if kind == CorrelationKind::Ind || k < 2 {
        return None;
    }
    let mut r = DVector::zeros(k);
    let mut d = DMatrix::zeros(k, p);
    let (mut ss, mut cross) = (0.0, 0.0);
    for i in 0..n {
        subject_terms(y, x, i, beta, &mut r, &mut d);
        ss += r.norm_squared();
        match kind {
            CorrelationKind::Exch => {
                let s = r.sum();
                cross += 0.5 * (s * s - r.norm_squared());
            }
            CorrelationKind::Ar1 => {
                cross += (0..k - 1).map(|j| r[j] * r[j + 1]).sum::<f64>();
            }
            CorrelationKind::Ind => unreachable!(),
        }
    }
    let phi = (ss / ((n * k) as f64 - p as f64).max(1.0)).max(f64::MIN_POSITIVE);
    let pairs = match kind {
        CorrelationKind::Exch => (n * k * (k - 1) / 2) as f64,
        _ => (n * (k - 1)) as f64,
    };
    let denom = (pairs - p as f64).max(1.0);
    let raw = cross / denom / phi;
    let (lo, hi) = WorkingCorrelation::alpha_range(kind, k);
    let margin = 1e-6;
    Some(raw.clamp(lo + margin, hi - margin))
}

/// Intercept-only start: cloglog of the pooled mean of the pseudo-observations.
pub(crate) fn pooled_start(y: &PseudoObsMatrix, p: usize) -> DVector<f64> {
    let eps = 0.01;
    let mean = y.values.mean().clamp(eps, 1.0 - eps);
    let mut b = DVector::zeros(p);
    b[0] = LinkCloglog::link(mean);
    b
}

pub fn fit_gee(y: &PseudoObsMatrix, x: &DesignMatrix, wc: &WorkingCorrelation) -> Result<FitResult> {
    fit_gee_with(y, x, wc, GeeOptions::default())
}

pub fn fit_gee_with(
    y: &PseudoObsMatrix,
    x: &DesignMatrix,
    wc: &WorkingCorrelation,
    opts: GeeOptions,
) -> Result<FitResult> {
    check_dims(y, x)?;
    if wc.k != x.k() {
        return Err(Error::Dimension(format!(
            "working correlation is {0}×{0}, design has K = {1}",
            wc.k,
            x.k()
        )));
    }
    let n = x.n() as f64;
    let mut beta = pooled_start(y, x.p());
    let mut current = *wc;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        if opts.estimate_alpha && current.kind != CorrelationKind::Ind {
            current.alpha = estimate_alpha(y, x, beta.as_slice(), current.kind);
        }
        let rinv = current.inverse()?;
        let acc = accumulate(y, x, beta.as_slice(), &rinv);
        let chol = acc
            .bread
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("GEE information matrix Γ₀".into()))?;
        let mut step = chol.solve(&acc.score);
        // halve steps that leave the region where μ is finite and informative
        let mut tries = 0;
        loop {
            let cand = &beta + &step;
            let ok = cand.iter().all(|v| v.is_finite())
                && accumulate(y, x, cand.as_slice(), &rinv).bread.cholesky().is_some();
            if ok || tries >= 30 {
                break;
            }
            step *= 0.5;
            tries += 1;
        }
        beta += &step;
        if step.amax() < opts.tol {
            converged = true;
            break;
        }
    }
    if opts.estimate_alpha && current.kind != CorrelationKind::Ind {
        current.alpha = estimate_alpha(y, x, beta.as_slice(), current.kind);
    }
    let rinv = current.inverse()?;
    let acc = accumulate(y, x, beta.as_slice(), &rinv);
    let bread_inv = spd_inverse(&acc.bread, "GEE information matrix Γ₀")?;
    let mut cov = &bread_inv * &acc.meat * &bread_inv;
    symmetrize(&mut cov);
    let score_norm = (acc.score / n).amax();
    let mut fit = FitResult::new(x.names().to_vec(), beta, cov, iterations, converged, score_norm);
    fit.correlation = Some(CorrelationInfo {
        kind: current.kind.label().into(),
        alpha: current.alpha,
    });
    if !converged {
        fit.message = Some(format!("GEE did not converge in {} iterations", opts.max_iter));
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surv::TimeGrid;

    /// Design with intercept + one binary covariate + K−1 time dummies and
    /// outcomes exactly equal to the mean at `beta`.
    fn noiseless(beta: &[f64], n: usize, k: usize) -> (PseudoObsMatrix, DesignMatrix) {
        let p = beta.len();
        let mut blocks = Vec::new();
        let mut y = DMatrix::zeros(n, k);
        for i in 0..n {
            let b = DMatrix::from_fn(k, p, |r, c| match c {
                0 => 1.0,
                1 => (i % 2) as f64,
                c if c - 1 == r => 1.0,
                _ => 0.0,
            });
            let eta = &b * DVector::from_column_slice(beta);
            for r in 0..k {
                y[(i, r)] = LinkCloglog::inverse(eta[r]);
            }
            blocks.push(b);
        }
        let names = (0..p).map(|j| format!("b{j}")).collect();
        let grid = TimeGrid::new((1..=k).map(|v| v as f64).collect()).unwrap();
        (
            PseudoObsMatrix { values: y, grid },
            DesignMatrix::from_blocks(&blocks, names).unwrap(),
        )
    }

    #[test]
    fn zero_residual_fixed_point() {
        let truth = [-0.7, -0.3, 0.4, 0.9];
        let (y, x) = noiseless(&truth, 40, 3);
        let fit = fit_gee(&y, &x, &WorkingCorrelation::independence(3)).unwrap();
        assert!(fit.converged);
        for (b, t) in fit.beta.iter().zip(truth) {
            assert!((b - t).abs() < 1e-8);
        }
        assert!(fit.score_norm < 1e-12);
    }

    #[test]
    fn correlation_matrices() {
        let e = WorkingCorrelation::new(CorrelationKind::Exch, 3, Some(0.3)).unwrap();
        let m = e.matrix();
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m[(0, 2)], 0.3);
        let a = WorkingCorrelation::new(CorrelationKind::Ar1, 3, Some(0.5)).unwrap();
        assert_eq!(a.matrix()[(0, 2)], 0.25);
        assert!(WorkingCorrelation::new(CorrelationKind::Exch, 3, Some(-0.6)).is_err());
        assert!(WorkingCorrelation::new(CorrelationKind::Ar1, 3, Some(1.0)).is_err());
        assert_eq!(WorkingCorrelation::independence(4).matrix(), DMatrix::identity(4, 4));
    }

    #[test]
    fn kinds_parse() {
        assert_eq!("exch".parse::<CorrelationKind>().unwrap(), CorrelationKind::Exch);
        assert_eq!("AR-1".parse::<CorrelationKind>().unwrap(), CorrelationKind::Ar1);
        assert!("toeplitz".parse::<CorrelationKind>().is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let (y, x) = noiseless(&[0.0, 0.0, 0.0], 10, 2);
        assert!(fit_gee(&y, &x, &WorkingCorrelation::independence(3)).is_err());
    }
}
