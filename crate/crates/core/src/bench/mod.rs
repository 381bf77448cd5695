//! Benchmark estimators: Cox proportional hazards and a Bayesian piecewise
//! exponential model.

pub mod cox;
pub mod pem;

pub use cox::{cox_log_partial_likelihood, fit_cox, fit_cox_matrix};
pub use pem::{fit_pem, interval_count, PemFit, PemPosterior, PemSpec};

use nalgebra::DMatrix;

use crate::surv::SurvivalDataset;
use crate::{Error, Result};

/// Regressor matrix `[arm, selected covariates]` and its column names.
pub(crate) fn regressors(
    data: &SurvivalDataset,
    treatment: bool,
    covariates: &[usize],
) -> Result<(DMatrix<f64>, Vec<String>)> {
    let n = data.len();
    let mut names = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    if treatment {
        names.push("treatment".to_string());
        cols.push(data.arm().iter().map(|&a| f64::from(a)).collect());
    }
    if !covariates.is_empty() {
        let cov = data
            .covariates()
            .ok_or_else(|| Error::Config("dataset has no covariates".into()))?;
        for &c in covariates {
            if c >= cov.names.len() {
                return Err(Error::Config(format!("covariate index {c} out of range")));
            }
            names.push(cov.names[c].clone());
            cols.push(cov.values.column(c).iter().copied().collect());
        }
    }
    let m = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    Ok((m, names))
}
