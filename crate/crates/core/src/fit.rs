//! Point-estimate fit results shared by GEE, GMM and Cox.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Description of the working correlation used by a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationInfo {
    pub kind: String,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub names: Vec<String>,
    pub beta: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub se: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Max-norm of the estimating equation (GEE, Cox) or of the QIF gradient (GMM) at `beta`.
    pub score_norm: f64,
    pub correlation: Option<CorrelationInfo>,
    /// Objective value at the estimate (QIF for GMM, log partial likelihood for Cox).
    pub objective: Option<f64>,
    pub message: Option<String>,
}

impl FitResult {
    pub(crate) fn new(
        names: Vec<String>,
        beta: DVector<f64>,
        covariance: DMatrix<f64>,
        iterations: usize,
        converged: bool,
        score_norm: f64,
    ) -> Self {
        let se = covariance.diagonal().map(|v| v.max(0.0).sqrt());
        Self {
            names,
            beta,
            covariance,
            se,
            iterations,
            converged,
            score_norm,
            correlation: None,
            objective: None,
            message: None,
        }
    }

    /// Wald intervals `β̂ ± z·se` at the given two-sided level.
    pub fn wald_intervals(&self, level: f64) -> Vec<(f64, f64)> {
        wald_interval(self, level)
    }
}

/// Two-sided standard-normal quantile `z_{(1+level)/2}`.
pub fn normal_quantile(level: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.5 + 0.5 * level)
}

pub fn wald_interval(fit: &FitResult, level: f64) -> Vec<(f64, f64)> {
    let z = normal_quantile(level);
    fit.beta
        .iter()
        .zip(fit.se.iter())
        .map(|(b, s)| (b - z * s, b + z * s))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit_with(beta: f64, se: f64) -> FitResult {
        FitResult::new(
            vec!["b".into()],
            DVector::from_element(1, beta),
            DMatrix::from_element(1, 1, se * se),
            1,
            true,
            0.0,
        )
    }

    #[test]
    fn ninety_five_percent() {
        let (lo, hi) = wald_interval(&fit_with(0.0, 0.1), 0.95)[0];
        assert!((lo + 0.196).abs() < 1e-3 && (hi - 0.196).abs() < 1e-3);
    }

    #[test]
    fn fifty_percent() {
        let (lo, hi) = wald_interval(&fit_with(1.0, 2.0), 0.5)[0];
        assert!(((hi - lo) / 2.0 - 0.6745 * 2.0).abs() < 1e-3);
    }
}
