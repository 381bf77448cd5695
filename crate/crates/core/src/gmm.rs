//! Quadratic inference functions (GMM with working-correlation basis matrices).
//!
//! The inverse working correlation is expanded as `Σ a_j M_j`; each basis
//! matrix contributes a block `D_i' M_j (y_i − μ_i)` to the subject score and
//! the stacked moments are combined through `Q_n = U_nᵀ C_n⁻¹ U_n`.
//!
//! `C_n` has rank at most `K` times the number of distinct design blocks, so
//! with a treatment indicator alone and `J = 2` it is singular by construction.
//! A Moore-Penrose pseudo-inverse stands in for `C_n⁻¹` whenever the Cholesky
//! factorisation is rejected.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::design::{DesignMatrix, LinkCloglog, ETA_SATURATION};
use crate::fit::{CorrelationInfo, FitResult};
use crate::gee::CorrelationKind;
use crate::linalg::{spd_inverse, symmetrize, PsdSolver};
use crate::pseudo::PseudoObsMatrix;
use crate::{Error, Result};

/// Basis matrices `M_1 … M_J` for a working-correlation family.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    pub kind: CorrelationKind,
    pub matrices: Vec<DMatrix<f64>>,
}

impl BasisSet {
    pub fn new(kind: CorrelationKind, k: usize) -> Self {
        let mut matrices = vec![DMatrix::identity(k, k)];
        match kind {
            CorrelationKind::Ind => {}
            CorrelationKind::Exch => {
                matrices.push(DMatrix::from_fn(k, k, |i, j| if i == j { 0.0 } else { 1.0 }))
            }
            CorrelationKind::Ar1 => matrices.push(DMatrix::from_fn(k, k, |i, j| {
                if i.abs_diff(j) == 1 {
                    1.0
                } else {
                    0.0
                }
            })),
        }
        Self { kind, matrices }
    }

    /// Arbitrary user basis; the first matrix should be the identity.
    pub fn custom(kind: CorrelationKind, matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        let k = matrices
            .first()
            .map(|m| m.nrows())
            .ok_or_else(|| Error::Config("empty basis".into()))?;
        if matrices.iter().any(|m| m.shape() != (k, k)) {
            return Err(Error::Dimension("basis matrices must all be K×K".into()));
        }
        Ok(Self { kind, matrices })
    }

    pub fn j(&self) -> usize {
        self.matrices.len()
    }

    pub fn k(&self) -> usize {
        self.matrices[0].nrows()
    }
}

/// Stacked scores at one `β`.
#[derive(Debug, Clone)]
pub struct ScoreState {
    /// Per-subject scores `u_i` of length `J·P`.
    pub u: Vec<DVector<f64>>,
    /// `U_n = (1/n) Σ u_i`
    pub un: DVector<f64>,
    /// `C_n = (1/n²) Σ u_i u_iᵀ`
    pub cn: DMatrix<f64>,
    /// Some linear predictor exceeded the saturation threshold.
    pub saturated: bool,
}

/// `U_n`, `C_n` and the Gauss-Newton Jacobian `∂U_n/∂βᵀ ≈ −(1/n) Σ stack_j(D_i' M_j D_i)`.
#[derive(Debug, Clone)]
pub(crate) struct Moments {
    pub un: DVector<f64>,
    pub cn: DMatrix<f64>,
    pub jac: Option<DMatrix<f64>>,
    pub saturated: bool,
}

/// Subjects sharing a design block, with `Σ y_i` and `Σ y_i y_iᵀ`.
#[derive(Debug, Clone)]
struct BlockGroup {
    block: Vec<f64>,
    count: f64,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

/// Sufficient statistics for the moment conditions.
///
/// `u_i = Σ_j D'M_j (y_i − μ)` is linear in `y_i` and `D`, `μ` depend on the
/// subject only through its design block, so `U_n` and `C_n` need only the
/// first two moments of `y` within each distinct block.
#[derive(Debug, Clone)]
pub(crate) struct MomentStats {
    n: usize,
    k: usize,
    p: usize,
    groups: Vec<BlockGroup>,
}

impl MomentStats {
    pub fn new(y: &PseudoObsMatrix, x: &DesignMatrix) -> Self {
        let (n, k, p) = (x.n(), x.k(), x.p());
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut groups: Vec<BlockGroup> = Vec::new();
        for i in 0..n {
            let block = x.block_slice(i);
            let key: Vec<u64> = block.iter().map(|v| v.to_bits()).collect();
            let g = *index.entry(key).or_insert_with(|| {
                groups.push(BlockGroup {
                    block: block.to_vec(),
                    count: 0.0,
                    s1: vec![0.0; k],
                    s2: vec![0.0; k * k],
                });
                groups.len() - 1
            });
            let grp = &mut groups[g];
            grp.count += 1.0;
            for a in 0..k {
                let ya = y.values[(i, a)];
                grp.s1[a] += ya;
                for b in 0..k {
                    grp.s2[a * k + b] += ya * y.values[(i, b)];
                }
            }
        }
        Self { n, k, p, groups }
    }

    pub fn moments(&self, beta: &[f64], basis: &BasisSet, with_jacobian: bool) -> Moments {
        let (k, p) = (self.k, self.p);
        let jb = basis.j();
        let m = jb * p;
        let mut un = DVector::zeros(m);
        let mut cn = DMatrix::zeros(m, m);
        let mut jac = if with_jacobian { DMatrix::zeros(m, p) } else { DMatrix::zeros(0, 0) };
        let mut saturated = false;
        let mut mu = DVector::zeros(k);
        let mut d = DMatrix::zeros(k, p);
        for g in &self.groups {
            for row in 0..k {
                let xr = &g.block[row * p..(row + 1) * p];
                let eta: f64 = xr.iter().zip(beta).map(|(a, b)| a * b).sum();
                saturated |= eta > ETA_SATURATION;
                let gd = LinkCloglog::inverse_deriv(eta);
                mu[row] = LinkCloglog::inverse(eta);
                for c in 0..p {
                    d[(row, c)] = gd * xr[c];
                }
            }
            // Σ_i (y_i − μ) and Σ_i (y_i − μ)(y_i − μ)ᵀ over the group
            let s1 = DVector::from_column_slice(&g.s1);
            let r1 = &s1 - g.count * &mu;
            let s2 = DMatrix::from_row_slice(k, k, &g.s2);
            let r2 = s2 - &s1 * mu.transpose() - &mu * s1.transpose() + g.count * &mu * mu.transpose();
            // A = [D'M_1; …; D'M_J], an (J·P) × K matrix
            let mut a = DMatrix::zeros(m, k);
            for (j, mj) in basis.matrices.iter().enumerate() {
                a.rows_mut(j * p, p).copy_from(&(d.transpose() * mj));
            }
            un += &a * r1;
            cn += &a * r2 * a.transpose();
            if with_jacobian {
                jac -= g.count * &a * &d;
            }
        }
        let nf = self.n as f64;
        symmetrize(&mut cn);
        Moments {
            un: un / nf,
            cn: cn / (nf * nf),
            jac: with_jacobian.then(|| jac / nf),
            saturated,
        }
    }
}

pub(crate) fn moments(
    y: &PseudoObsMatrix,
    x: &DesignMatrix,
    beta: &[f64],
    basis: &BasisSet,
    with_jacobian: bool,
) -> Moments {
    MomentStats::new(y, x).moments(beta, basis, with_jacobian)
}

pub fn score_vector(
    y: &PseudoObsMatrix,
    x: &DesignMatrix,
    beta: &DVector<f64>,
    basis: &BasisSet,
) -> ScoreState {
    let (n, k, p) = (x.n(), x.k(), x.p());
    let m = basis.j() * p;
    let mut resid = DVector::zeros(k);
    let mut jac = DMatrix::zeros(k, p);
    let mut saturated = false;
    let mut u = Vec::with_capacity(n);
    let mut un = DVector::zeros(m);
    let mut cn = DMatrix::zeros(m, m);
    for i in 0..n {
        crate::gee::subject_terms(y, x, i, beta.as_slice(), &mut resid, &mut jac);
        let eta = x.block(i) * beta;
        saturated |= eta.iter().any(|&e| e > ETA_SATURATION);
        let mut ui = DVector::zeros(m);
        for (j, mj) in basis.matrices.iter().enumerate() {
            ui.rows_mut(j * p, p).copy_from(&(jac.transpose() * mj * &resid));
        }
        un += &ui;
        cn += &ui * ui.transpose();
        u.push(ui);
    }
    let nf = n as f64;
    ScoreState {
        u,
        un: un / nf,
        cn: cn / (nf * nf),
        saturated,
    }
}

/// `U_nᵀ C_n⁻¹ U_n`.
pub fn qif(y: &PseudoObsMatrix, x: &DesignMatrix, beta: &DVector<f64>, basis: &BasisSet) -> Result<f64> {
    let mo = moments(y, x, beta.as_slice(), basis, false);
    quadratic_form(&mo.un, &mo.cn)
}

/// Numerical rank of `C_n` at `beta`, i.e. the degrees of freedom of `Q_n` at the truth.
pub fn moment_rank(y: &PseudoObsMatrix, x: &DesignMatrix, beta: &DVector<f64>, basis: &BasisSet) -> Result<usize> {
    let mo = moments(y, x, beta.as_slice(), basis, false);
    Ok(cn_solver(&mo.cn)?.rank())
}

fn cn_solver(cn: &DMatrix<f64>) -> Result<PsdSolver> {
    PsdSolver::new(cn, 1e-14).ok_or_else(|| Error::Singular("C_n has no positive eigenvalue".into()))
}

fn quadratic_form(un: &DVector<f64>, cn: &DMatrix<f64>) -> Result<f64> {
    let solver = cn_solver(cn)?;
    Ok(un.dot(&solver.solve_vec(un)).max(0.0))
}

#[derive(Debug, Clone, Copy)]
pub struct GmmOptions {
    pub max_iter: usize,
    pub q_tol: f64,
    pub grad_tol: f64,
    /// Truncation used by the least-squares starting values.
    pub start_epsilon: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            q_tol: 1e-10,
            grad_tol: 1e-6,
            start_epsilon: 0.05,
        }
    }
}

struct Evaluated {
    q: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

fn evaluate(stats: &MomentStats, beta: &DVector<f64>, basis: &BasisSet) -> Result<Evaluated> {
    let mo = stats.moments(beta.as_slice(), basis, true);
    let jac = mo.jac.expect("jacobian requested");
    let solver = cn_solver(&mo.cn)?;
    let cinv_u = solver.solve_vec(&mo.un);
    let cinv_j = solver.solve(&jac);
    let q = mo.un.dot(&cinv_u).max(0.0);
    Ok(Evaluated {
        q,
        grad: 2.0 * jac.transpose() * cinv_u,
        hess: 2.0 * jac.transpose() * cinv_j,
    })
}

fn q_only(stats: &MomentStats, basis: &BasisSet, beta: &DVector<f64>) -> Option<f64> {
    let mo = stats.moments(beta.as_slice(), basis, false);
    quadratic_form(&mo.un, &mo.cn).ok().filter(|q| q.is_finite())
}

fn numeric_gradient(stats: &MomentStats, basis: &BasisSet, beta: &DVector<f64>) -> Option<DVector<f64>> {
    let mut g = DVector::zeros(beta.len());
    for j in 0..beta.len() {
        let h = 1e-6 * beta[j].abs().max(1.0);
        let mut b = beta.clone();
        b[j] += h;
        let up = q_only(stats, basis, &b)?;
        b[j] -= 2.0 * h;
        let down = q_only(stats, basis, &b)?;
        g[j] = (up - down) / (2.0 * h);
    }
    Some(g)
}

fn backtrack(
    stats: &MomentStats,
    basis: &BasisSet,
    beta: &DVector<f64>,
    step: &DVector<f64>,
    q: f64,
) -> Option<(DVector<f64>, Evaluated)> {
    let mut t = 1.0;
    for _ in 0..40 {
        let cand = beta + t * step;
        if let Ok(ev) = evaluate(stats, &cand, basis) {
            if ev.q.is_finite() && ev.q <= q + 1e-12 * q.abs().max(1e-300) {
                return Some((cand, ev));
            }
        }
        t *= 0.5;
    }
    None
}

pub fn fit_gmm(y: &PseudoObsMatrix, x: &DesignMatrix, basis: &BasisSet) -> Result<FitResult> {
    let opts = GmmOptions::default();
    let start = crate::bayes::starting_values(y, x, opts.start_epsilon)?;
    fit_gmm_from(y, x, basis, start, opts)
}

/// Gauss-Newton minimisation of `Q_n` with backtracking line search.
pub fn fit_gmm_from(
    y: &PseudoObsMatrix,
    x: &DesignMatrix,
    basis: &BasisSet,
    start: DVector<f64>,
    opts: GmmOptions,
) -> Result<FitResult> {
    if y.n() != x.n() || y.k() != x.k() || basis.k() != x.k() {
        return Err(Error::Dimension(format!(
            "pseudo-observations {}×{}, design K = {}, basis K = {}",
            y.n(),
            y.k(),
            x.k(),
            basis.k()
        )));
    }
    if start.len() != x.p() {
        return Err(Error::Dimension(format!("start has {} entries, P = {}", start.len(), x.p())));
    }
    let stats = MomentStats::new(y, x);
    let mut beta = start;
    let mut cur = evaluate(&stats, &beta, basis)?;
    let mut converged = false;
    let mut message = None;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        if cur.grad.amax() < opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let Some(chol) = cur.hess.clone().cholesky() else {
            message = Some("singular Gauss-Newton matrix".to_string());
            break;
        };
        let step = -chol.solve(&cur.grad);
        // the Gauss-Newton direction treats C_n as fixed; when it is not a
        // descent direction for the full Q_n, fall back to its numerical gradient
        let accepted = backtrack(&stats, basis, &beta, &step, cur.q).or_else(|| {
            let g = numeric_gradient(&stats, basis, &beta)?;
            backtrack(&stats, basis, &beta, &(-g), cur.q)
        });
        let Some((cand, ev)) = accepted else {
            message = Some("line search failed".to_string());
            break;
        };
        let dq = (cur.q - ev.q).abs();
        beta = cand;
        cur = ev;
        if dq < opts.q_tol {
            converged = true;
            break;
        }
    }
    if !converged && message.is_none() {
        message = Some(format!("no convergence in {} iterations", opts.max_iter));
    }
    let mut cov = spd_inverse(&(0.5 * &cur.hess), "GMM information matrix")?;
    symmetrize(&mut cov);
    let mut fit = FitResult::new(x.names().to_vec(), beta, cov, iterations, converged, cur.grad.amax());
    fit.objective = Some(cur.q);
    fit.correlation = Some(CorrelationInfo {
        kind: basis.kind.label().into(),
        alpha: None,
    });
    fit.message = message;
    Ok(fit)
}
