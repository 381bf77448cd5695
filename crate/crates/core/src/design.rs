//! Regression design for the pseudo-observation mean model and the cloglog link.
//!
//! Each subject contributes a `K × P` block with columns
//! `(intercept, treatment, time_2, …, time_K, covariates…)`; the first grid
//! point is absorbed into the intercept.

use nalgebra::{DMatrix, DVector};

use crate::surv::{SurvivalDataset, TimeGrid};
use crate::{Error, Result};

/// Linear predictors above this value are treated as saturated: `μ = 0`, `μ' = 0`.
pub const ETA_SATURATION: f64 = 700.0;

/// Complementary log-log link `g(x) = log(−log x)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinkCloglog;

impl LinkCloglog {
    pub fn link(x: f64) -> f64 {
        let minus_log = if x > 0.5 { -(x - 1.0).ln_1p() } else { -x.ln() };
        minus_log.ln()
    }

    pub fn inverse(eta: f64) -> f64 {
        if eta > ETA_SATURATION {
            0.0
        } else {
            (-eta.exp()).exp()
        }
    }

    /// `dμ/dη = −exp(η − exp(η))`.
    pub fn inverse_deriv(eta: f64) -> f64 {
        if eta > ETA_SATURATION {
            0.0
        } else {
            -(eta - eta.exp()).exp()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DesignOptions {
    /// Center covariates and scale them to standard deviation 0.5.
    pub standardize_covariates: bool,
}

/// Per-subject `K × P` design blocks stored contiguously (row-major within a block).
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    n: usize,
    k: usize,
    p: usize,
    names: Vec<String>,
    data: Vec<f64>,
}

impl DesignMatrix {
    /// Assembles a design from explicit blocks, mainly for tests and custom models.
    pub fn from_blocks(blocks: &[DMatrix<f64>], names: Vec<String>) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::Dimension("no design blocks".into()))?;
        let (k, p) = first.shape();
        if names.len() != p {
            return Err(Error::Dimension(format!("{} names for {p} columns", names.len())));
        }
        let mut data = Vec::with_capacity(blocks.len() * k * p);
        for (i, b) in blocks.iter().enumerate() {
            if b.shape() != (k, p) {
                return Err(Error::Dimension(format!(
                    "block {i} is {:?}, expected {:?}",
                    b.shape(),
                    (k, p)
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("block {i} has non-finite entries")));
            }
            for r in 0..k {
                for c in 0..p {
                    data.push(b[(r, c)]);
                }
            }
        }
        Ok(Self {
            n: blocks.len(),
            k,
            p,
            names,
            data,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Row-major `K × P` slice for subject `i`.
    pub fn block_slice(&self, i: usize) -> &[f64] {
        let len = self.k * self.p;
        &self.data[i * len..(i + 1) * len]
    }

    pub fn block(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.k, self.p, self.block_slice(i))
    }

    /// All blocks stacked into an `(n·K) × P` matrix.
    pub fn stacked(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n * self.k, self.p, &self.data)
    }

    /// Linear predictor `X_i β` for subject `i`, written into `eta`.
    pub fn linear_predictor_into(&self, i: usize, beta: &[f64], eta: &mut [f64]) {
        let x = self.block_slice(i);
        for (r, e) in eta.iter_mut().enumerate() {
            let row = &x[r * self.p..(r + 1) * self.p];
            *e = row.iter().zip(beta).map(|(a, b)| a * b).sum();
        }
    }
}

pub fn build_design(data: &SurvivalDataset, grid: &TimeGrid) -> Result<DesignMatrix> {
    build_design_with(data, grid, DesignOptions::default())
}

pub fn build_design_with(
    data: &SurvivalDataset,
    grid: &TimeGrid,
    options: DesignOptions,
) -> Result<DesignMatrix> {
    let n = data.len();
    let k = grid.len();
    let mut names = vec!["intercept".to_string(), "treatment".to_string()];
    for (j, t) in grid.points().iter().enumerate().skip(1) {
        names.push(format!("time{}@{}", j + 1, t));
    }
    let covariates = match data.covariates() {
        Some(cov) => {
            if let Some(bad) = cov.values.iter().position(|v| !v.is_finite()) {
                let (row, col) = (bad % n, bad / n);
                return Err(Error::InvalidData(format!(
                    "covariate '{}' of subject {row} is not finite",
                    cov.names[col]
                )));
            }
            names.extend(cov.names.iter().cloned());
            let mut values = cov.values.clone();
            if options.standardize_covariates {
                for mut col in values.column_iter_mut() {
                    let mean = col.mean();
                    let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                        / (n.max(2) - 1) as f64)
                        .sqrt();
                    let scale = if sd > 0.0 { 0.5 / sd } else { 1.0 };
                    col.apply(|v| *v = (*v - mean) * scale);
                }
            }
            Some(values)
        }
        None => None,
    };
    let c = covariates.as_ref().map_or(0, |m| m.ncols());
    let p = 2 + (k - 1) + c;
    let mut out = Vec::with_capacity(n * k * p);
    for i in 0..n {
        for row in 0..k {
            out.push(1.0);
            out.push(f64::from(data.arm()[i]));
            for j in 1..k {
                out.push(if j == row { 1.0 } else { 0.0 });
            }
            if let Some(cov) = &covariates {
                for col in 0..c {
                    out.push(cov[(i, col)]);
                }
            }
        }
    }
    Ok(DesignMatrix {
        n,
        k,
        p,
        names,
        data: out,
    })
}

/// Mean vector `μ_i = g⁻¹(X_i β)` and Jacobian `D_i = ∂μ_i/∂βᵀ` for one block.
pub fn mean_and_derivative(x: &DMatrix<f64>, beta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eta = x * beta;
    let mu = eta.map(LinkCloglog::inverse);
    let mut d = x.clone();
    for (r, &e) in eta.iter().enumerate() {
        let g = LinkCloglog::inverse_deriv(e);
        d.row_mut(r).scale_mut(g);
    }
    (mu, d)
}
