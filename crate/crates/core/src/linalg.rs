use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Result};

/// Cholesky factor of a symmetric matrix, rejected when the squared ratio of the
/// smallest to largest pivot (a cheap reciprocal-condition proxy) is below `rcond_floor`.
pub(crate) fn cholesky_checked(m: &DMatrix<f64>, rcond_floor: f64) -> Option<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let chol = m.clone().cholesky()?;
    let diag = chol.l_dirty().diagonal();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for &d in diag.iter() {
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if !(lo > 0.0) || (lo / hi).powi(2) < rcond_floor {
        return None;
    }
    Some(chol)
}

pub(crate) fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    cholesky_checked(m, 1e-14)
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Ordinary least squares via SVD, failing on rank deficiency.
pub(crate) fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let cols = x.ncols();
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * (x.nrows().max(cols) as f64);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < cols {
        return Err(Error::RankDeficient { rank, cols });
    }
    svd.solve(y, tol)
        .map_err(|e| Error::Singular(e.to_string()))
}

/// Solver for a symmetric positive semi-definite matrix: Cholesky when the
/// matrix is well conditioned, Moore-Penrose pseudo-inverse otherwise.
pub(crate) enum PsdSolver {
    Cholesky(Cholesky<f64, Dyn>),
    Pseudo { inverse: DMatrix<f64>, rank: usize },
}

impl PsdSolver {
    /// `None` when the matrix has non-finite entries or no positive eigenvalue.
    pub fn new(m: &DMatrix<f64>, rcond_floor: f64) -> Option<Self> {
        if let Some(c) = cholesky_checked(m, rcond_floor) {
            return Some(Self::Cholesky(c));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let eig = m.clone().symmetric_eigen();
        let top = eig.eigenvalues.max();
        if !(top > 0.0) {
            return None;
        }
        let tol = top * 1e-10 * m.nrows() as f64;
        let mut inverse = DMatrix::zeros(m.nrows(), m.ncols());
        let mut rank = 0;
        for (i, &l) in eig.eigenvalues.iter().enumerate() {
            if l > tol {
                let v = eig.eigenvectors.column(i);
                inverse += (v * v.transpose()) / l;
                rank += 1;
            }
        }
        Some(Self::Pseudo { inverse, rank })
    }

    pub fn rank(&self) -> usize {
        match self {
            Self::Cholesky(c) => c.l_dirty().nrows(),
            Self::Pseudo { rank, .. } => *rank,
        }
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Self::Cholesky(c) => c.solve(b),
            Self::Pseudo { inverse, .. } => inverse * b,
        }
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Cholesky(c) => c.solve(b),
            Self::Pseudo { inverse, .. } => inverse * b,
        }
    }
}
