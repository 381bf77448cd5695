//! Cox proportional hazards via Newton-Raphson on the Breslow partial likelihood.

use nalgebra::{DMatrix, DVector};

use crate::fit::FitResult;
use crate::linalg::{cholesky_checked, spd_inverse, symmetrize};
use crate::surv::SurvivalDataset;
use crate::{Error, Result};

/// Coefficients beyond this magnitude are taken as a sign of monotone likelihood.
const MONOTONE_BETA: f64 = 20.0;
const MONOTONE_SE: f64 = 1e3;

struct Derivs {
    loglik: f64,
    score: DVector<f64>,
    info: DMatrix<f64>,
}

/// Breslow log partial likelihood with score and observed information.
fn derivatives(data: &SurvivalDataset, z: &DMatrix<f64>, beta: &DVector<f64>) -> Derivs {
    let p = z.ncols();
    let order = data.order();
    let (time, event) = (data.time(), data.event());
    let eta = z * beta;
    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(p);
    let mut s2 = DMatrix::zeros(p, p);
    let mut loglik = 0.0;
    let mut score = DVector::zeros(p);
    let mut info = DMatrix::zeros(p, p);
    // walk from the largest time down so the running sums are the risk sets
    let mut pos = order.len();
    while pos > 0 {
        let t = time[order[pos - 1]];
        let mut start = pos;
        while start > 0 && time[order[start - 1]] == t {
            start -= 1;
        }
        let mut d = 0.0;
        let mut zsum = DVector::zeros(p);
        for &i in &order[start..pos] {
            let zi = z.row(i).transpose();
            let w = eta[i].exp();
            s0 += w;
            s1 += w * &zi;
            s2 += w * &zi * zi.transpose();
            if event[i] {
                d += 1.0;
                loglik += eta[i];
                zsum += &zi;
            }
        }
        if d > 0.0 {
            let mean = &s1 / s0;
            loglik -= d * s0.ln();
            score += zsum - d * &mean;
            info += d * (&s2 / s0 - &mean * mean.transpose());
        }
        pos = start;
    }
    Derivs { loglik, score, info }
}

/// Breslow log partial likelihood at `beta` for regressors `z` (one row per subject).
pub fn cox_log_partial_likelihood(data: &SurvivalDataset, z: &DMatrix<f64>, beta: &[f64]) -> f64 {
    derivatives(data, z, &DVector::from_column_slice(beta)).loglik
}

/// Cox regression on treatment plus the selected covariate columns.
pub fn fit_cox(data: &SurvivalDataset, covariates: &[usize]) -> Result<FitResult> {
    let (z, names) = super::regressors(data, true, covariates)?;
    fit_cox_matrix(data, &z, names)
}

pub fn fit_cox_matrix(data: &SurvivalDataset, z: &DMatrix<f64>, names: Vec<String>) -> Result<FitResult> {
    let p = z.ncols();
    if z.nrows() != data.len() || names.len() != p || p == 0 {
        return Err(Error::Dimension(format!("regressors {:?} for {} subjects", z.shape(), data.len())));
    }
    let mut beta = DVector::zeros(p);
    let mut cur = derivatives(data, z, &beta);
    let mut converged = false;
    let mut message = None;
    let mut iterations = 0;
    while iterations < 60 {
        if cur.score.amax() < 1e-9 {
            converged = true;
            break;
        }
        iterations += 1;
        let Some(chol) = cholesky_checked(&cur.info, 1e-20) else {
            message = Some("singular information matrix".to_string());
            break;
        };
        let step = chol.solve(&cur.score);
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..30 {
            let cand = &beta + t * &step;
            let d = derivatives(data, z, &cand);
            if d.loglik.is_finite() && d.loglik >= cur.loglik - 1e-12 * cur.loglik.abs() {
                next = Some((cand, d));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, d)) = next else {
            message = Some("step halving failed".to_string());
            break;
        };
        beta = cand;
        cur = d;
        if beta.amax() > MONOTONE_BETA {
            break;
        }
    }
    let mut cov = match spd_inverse(&cur.info, "Cox information matrix") {
        Ok(c) => c,
        Err(_) => DMatrix::from_diagonal_element(p, p, f64::INFINITY),
    };
    symmetrize(&mut cov);
    let monotone = beta.amax() > MONOTONE_BETA
        || cov.diagonal().iter().any(|v| !(v.sqrt() < MONOTONE_SE));
    if monotone {
        converged = false;
        message = Some("monotone likelihood: coefficient diverges".to_string());
    } else if !converged && message.is_none() {
        message = Some("no convergence in 60 iterations".to_string());
    }
    let mut fit = FitResult::new(names, beta, cov, iterations, converged, cur.score.amax());
    fit.objective = Some(cur.loglik);
    fit.message = message;
    Ok(fit)
}
