mod common;

use common::{core_replicate, prepare, rng};
use nalgebra::{DMatrix, DVector};
use pseudosurv::bayes::PseudoLikelihood;
use pseudosurv::bench::{cox_log_partial_likelihood, fit_cox};
use pseudosurv::design::{build_design, DesignMatrix};
use pseudosurv::gee::{fit_gee, fit_gee_with, CorrelationKind, GeeOptions, WorkingCorrelation};
use pseudosurv::gmm::{fit_gmm, qif, score_vector, BasisSet};
use pseudosurv::pseudo::{pseudo_observations, PseudoObsMatrix};
use pseudosurv::sim::{calibrate_censoring, generate_trial, Scenario};
use pseudosurv::surv::{select_time_grid, Covariates, SurvivalDataset};
use rand::Rng;

fn mu(eta: f64) -> f64 {
    (-eta.exp()).exp()
}

fn dmu(eta: f64) -> f64 {
    -eta.exp() * mu(eta)
}

/// Residual and `D_i` of subject `i`, written out from the mean model.
fn subject(y: &PseudoObsMatrix, x: &DesignMatrix, i: usize, beta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let xi = x.block(i);
    let eta = &xi * beta;
    let r = DVector::from_fn(x.k(), |k, _| y.values[(i, k)] - mu(eta[k]));
    let d = DMatrix::from_fn(x.k(), x.p(), |k, c| dmu(eta[k]) * xi[(k, c)]);
    (r, d)
}

/// Gauss-Newton for `min Σ ||y_i − μ_i(β)||²`.
fn nls(y: &PseudoObsMatrix, x: &DesignMatrix, start: DVector<f64>) -> DVector<f64> {
    let mut beta = start;
    for _ in 0..200 {
        let mut a = DMatrix::zeros(x.p(), x.p());
        let mut g = DVector::zeros(x.p());
        for i in 0..x.n() {
            let (r, d) = subject(y, x, i, &beta);
            a += d.transpose() * &d;
            g += d.transpose() * r;
        }
        let step = a.lu().solve(&g).unwrap();
        beta += &step;
        if step.amax() < 1e-13 {
            break;
        }
    }
    beta
}

fn sandwich(y: &PseudoObsMatrix, x: &DesignMatrix, beta: &DVector<f64>, rinv: &DMatrix<f64>) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(x.p(), x.p());
    let mut b = DMatrix::zeros(x.p(), x.p());
    for i in 0..x.n() {
        let (r, d) = subject(y, x, i, beta);
        a += d.transpose() * rinv * &d;
        let u = d.transpose() * rinv * r;
        b += &u * u.transpose();
    }
    let ai = a.try_inverse().unwrap();
    &ai * b * &ai
}

fn with_covariate(seed: u64, n: usize) -> SurvivalDataset {
    let s = Scenario { n, ..Scenario::core() };
    let b = calibrate_censoring(&s).unwrap();
    let d = generate_trial(&s, b, seed).unwrap();
    let mut r = rng(seed);
    let age = DMatrix::from_fn(n, 1, |_, _| r.gen_range(-1.0..1.0));
    SurvivalDataset::with_covariates(
        d.time().to_vec(),
        d.event().to_vec(),
        d.arm().to_vec(),
        Some(Covariates {
            names: vec!["age".into()],
            values: age,
        }),
    )
    .unwrap()
}

#[test]
fn gee_independence_matches_least_squares() {
    let s = Scenario::core();
    for rep in 0..5 {
        let p = core_replicate(&s, rep);
        let fit = fit_gee(&p.y, &p.x, &WorkingCorrelation::independence(p.x.k())).unwrap();
        assert!(fit.converged);
        let oracle = nls(&p.y, &p.x, DVector::from_vec(p.truth.clone()));
        assert!((&fit.beta - &oracle).amax() < 1e-8, "rep {rep}");
        let cov = sandwich(&p.y, &p.x, &oracle, &DMatrix::identity(p.x.k(), p.x.k()));
        assert!((&fit.covariance - &cov).amax() < 1e-9 * cov.amax().max(1.0));
    }
}

#[test]
fn gee_fixed_exchangeable_solves_its_equation() {
    let s = Scenario::core();
    let p = core_replicate(&s, 3);
    let wc = WorkingCorrelation::new(CorrelationKind::Exch, p.x.k(), Some(0.4)).unwrap();
    let opts = GeeOptions {
        estimate_alpha: false,
        ..GeeOptions::default()
    };
    let fit = fit_gee_with(&p.y, &p.x, &wc, opts).unwrap();
    let k = p.x.k();
    let r = DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { 0.4 });
    let rinv = r.try_inverse().unwrap();
    let mut score = DVector::zeros(p.x.p());
    for i in 0..p.x.n() {
        let (res, d) = subject(&p.y, &p.x, i, &fit.beta);
        score += d.transpose() * &rinv * res;
    }
    assert!(score.amax() / (p.x.n() as f64) < 1e-8);
    let cov = sandwich(&p.y, &p.x, &fit.beta, &rinv);
    assert!((&fit.covariance - &cov).amax() < 1e-9);
}

#[test]
fn gee_and_gmm_agree_under_independence() {
    let s = Scenario::core();
    for rep in 0..10 {
        let p = core_replicate(&s, rep);
        let gee = fit_gee(&p.y, &p.x, &WorkingCorrelation::independence(p.x.k())).unwrap();
        let gmm = fit_gmm(&p.y, &p.x, &BasisSet::new(CorrelationKind::Ind, p.x.k())).unwrap();
        assert!((&gee.beta - &gmm.beta).amax() < 1e-6, "rep {rep}");
        // just-identified: Q is zero at the estimate
        assert!(gmm.objective.unwrap() < 1e-10);
    }
}

/// `U_n` and `C_n` from per-subject scores written out in full.
fn moments_oracle(y: &PseudoObsMatrix, x: &DesignMatrix, beta: &DVector<f64>, basis: &BasisSet) -> (DVector<f64>, DMatrix<f64>) {
    let (n, p) = (x.n(), x.p());
    let m = basis.j() * p;
    let mut un = DVector::zeros(m);
    let mut cn = DMatrix::zeros(m, m);
    for i in 0..n {
        let (r, d) = subject(y, x, i, beta);
        let mut u = DVector::zeros(m);
        for (j, mj) in basis.matrices.iter().enumerate() {
            u.rows_mut(j * p, p).copy_from(&(d.transpose() * mj * &r));
        }
        un += &u;
        cn += &u * u.transpose();
    }
    let nf = n as f64;
    (un / nf, cn / (nf * nf))
}

#[test]
fn grouped_moments_match_per_subject_scores() {
    let mut checked_q = 0;
    for seed in 0..4 {
        let d = with_covariate(seed, 200);
        let g = select_time_grid(&d, 4).unwrap();
        let y = pseudo_observations(&d, &g).unwrap();
        let x = build_design(&d, &g).unwrap();
        for kind in [CorrelationKind::Ind, CorrelationKind::Exch, CorrelationKind::Ar1] {
            let basis = BasisSet::new(kind, x.k());
            let beta = DVector::from_vec(vec![-2.3, -0.2, 0.9, 1.4, 2.2, 0.3]);
            let (un, cn) = moments_oracle(&y, &x, &beta, &basis);
            let lik = PseudoLikelihood::new(&y, &x, &basis).unwrap();
            let st = lik.sigma(beta.as_slice());
            assert!((&st.un - &un).amax() < 1e-12 * un.amax().max(1.0));
            assert!((&st.cn - &cn).amax() < 1e-12 * cn.amax());
            let sv = score_vector(&y, &x, &beta, &basis);
            assert!((&sv.un - &un).amax() < 1e-12 * un.amax().max(1.0));
            let eig = cn.clone().symmetric_eigen().eigenvalues;
            if eig.min() > 1e-8 * eig.max() {
                let oracle = un.dot(&cn.lu().solve(&un).unwrap());
                let q = qif(&y, &x, &beta, &basis).unwrap();
                assert!((q - oracle).abs() < 1e-7 * oracle.max(1.0), "{kind:?}: {q} vs {oracle}");
                checked_q += 1;
            }
        }
    }
    assert!(checked_q >= 4);
}

#[test]
fn covariate_grows_the_design_and_fits_adjust() {
    let d = with_covariate(9, 400);
    let g = select_time_grid(&d, 5).unwrap();
    let y = pseudo_observations(&d, &g).unwrap();
    let x = build_design(&d, &g).unwrap();
    assert_eq!(x.p(), 7);
    let gee = fit_gee(&y, &x, &WorkingCorrelation::independence(5)).unwrap();
    let gmm = fit_gmm(&y, &x, &BasisSet::new(CorrelationKind::Exch, 5)).unwrap();
    let cox = fit_cox(&d, &[0]).unwrap();
    assert_eq!(gee.beta.len(), 7);
    assert_eq!(gmm.beta.len(), 7);
    assert_eq!(cox.beta.len(), 2);
    assert!(gee.converged && gmm.converged && cox.converged);
}

/// Breslow partial likelihood for one binary regressor, straight from the definition.
fn breslow(time: &[f64], event: &[bool], z: &[f64], beta: f64) -> f64 {
    let mut l = 0.0;
    let mut done: Vec<f64> = Vec::new();
    for (i, &t) in time.iter().enumerate() {
        if !event[i] || done.contains(&t) {
            continue;
        }
        done.push(t);
        let tied: Vec<usize> = (0..time.len()).filter(|&j| event[j] && time[j] == t).collect();
        let risk: f64 = (0..time.len()).filter(|&j| time[j] >= t).map(|j| (beta * z[j]).exp()).sum();
        for &j in &tied {
            l += beta * z[j];
        }
        l -= tied.len() as f64 * risk.ln();
    }
    l
}

#[test]
fn cox_matches_golden_section_search() {
    let mut r = rng(77);
    for _ in 0..10 {
        let n = 30;
        let time: Vec<f64> = (0..n).map(|_| f64::from(r.gen_range(1..25u32))).collect();
        let event: Vec<bool> = (0..n).map(|_| r.gen::<f64>() < 0.75).collect();
        let arm: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let d = SurvivalDataset::new(time.clone(), event.clone(), arm.clone()).unwrap();
        let z: Vec<f64> = arm.iter().map(|&a| f64::from(a)).collect();
        let fit = fit_cox(&d, &[]).unwrap();
        let zm = DMatrix::from_column_slice(n, 1, &z);
        assert!((cox_log_partial_likelihood(&d, &zm, &[0.3]) - breslow(&time, &event, &z, 0.3)).abs() < 1e-10);
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let f = |b: f64| -breslow(&time, &event, &z, b);
        let (mut a, mut b) = (-5.0, 5.0);
        for _ in 0..200 {
            let c = b - phi * (b - a);
            let e = a + phi * (b - a);
            if f(c) < f(e) {
                b = e;
            } else {
                a = c;
            }
        }
        assert!((fit.beta[0] - 0.5 * (a + b)).abs() < 1e-4);
    }
}

#[test]
fn core_replicate_prepares_consistently() {
    let s = Scenario::core();
    let b = calibrate_censoring(&s).unwrap();
    let d = generate_trial(&s, b, s.replication_seed(0)).unwrap();
    let p = prepare(d.clone(), &s);
    assert_eq!(p.x.n(), 500);
    assert_eq!(p.truth.len(), p.x.p());
    assert_eq!(p.truth[1], -0.3);
    assert_eq!(p.data.len(), d.len());
}
