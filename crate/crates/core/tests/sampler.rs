use nalgebra::DMatrix;
use pseudosurv::mcmc::{ess, sample, summarize, McmcConfig, PosteriorDraws};

fn config(seed: u64) -> McmcConfig {
    McmcConfig {
        iterations: 20_000,
        warmup: 2_000,
        thin: 2,
        seed,
        ..McmcConfig::default()
    }
}

/// Second central moment of parameter `p` and its Monte Carlo standard error.
fn variance_with_mcse(draws: &PosteriorDraws, p: usize, mean: f64) -> (f64, f64) {
    let sq: Vec<Vec<f64>> = draws
        .parameter(p)
        .into_iter()
        .map(|c| c.into_iter().map(|v| (v - mean).powi(2)).collect())
        .collect();
    let pooled = sq.concat();
    let m = pooled.iter().sum::<f64>() / pooled.len() as f64;
    let sd = (pooled.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (pooled.len() - 1) as f64).sqrt();
    (m, sd / ess(&sq).sqrt())
}

#[test]
fn independent_normal_moments() {
    let sds = [0.5, 1.0, 2.0, 4.0];
    let means = [1.0, -2.0, 0.0, 3.0];
    let target = (4usize, move |x: &[f64]| {
        Some(-0.5 * (0..4).map(|i| ((x[i] - means[i]) / sds[i]).powi(2)).sum::<f64>())
    });
    let inits = vec![vec![0.0; 4], vec![1.0; 4], vec![-1.0; 4]];
    let names = (0..4).map(|i| format!("x{i}")).collect();
    let draws = sample(&target, names, &inits, &DMatrix::identity(4, 4), &config(1)).unwrap();
    let s = summarize(&draws, &[], 0.95);
    assert!(draws.max_rhat() < 1.01);
    for i in 0..4 {
        let p = &s.params[i];
        assert!((p.mean - means[i]).abs() < 3.0 * p.mcse_mean, "{i}: {} vs {}", p.mean, means[i]);
        let (v, se) = variance_with_mcse(&draws, i, means[i]);
        assert!((v - sds[i] * sds[i]).abs() < 3.0 * se, "{i}: var {v} ± {se}");
    }
}

#[test]
fn correlated_normal_moments() {
    let rho: f64 = 0.9;
    let det = 1.0 - rho * rho;
    let target = (2usize, move |x: &[f64]| {
        Some(-0.5 * (x[0] * x[0] - 2.0 * rho * x[0] * x[1] + x[1] * x[1]) / det)
    });
    let inits = vec![vec![2.0, -2.0], vec![0.0, 0.0], vec![-2.0, 2.0]];
    let draws = sample(&target, vec!["a".into(), "b".into()], &inits, &DMatrix::identity(2, 2), &config(2)).unwrap();
    let s = summarize(&draws, &[], 0.95);
    for p in &s.params {
        assert!(p.mean.abs() < 3.0 * p.mcse_mean);
    }
    for i in 0..2 {
        let (v, se) = variance_with_mcse(&draws, i, 0.0);
        assert!((v - 1.0).abs() < 3.0 * se);
    }
    // cross moment E[ab] = ρ
    let prod: Vec<Vec<f64>> = draws
        .parameter(0)
        .into_iter()
        .zip(draws.parameter(1))
        .map(|(a, b)| a.iter().zip(&b).map(|(u, v)| u * v).collect())
        .collect();
    let pooled = prod.concat();
    let m = pooled.iter().sum::<f64>() / pooled.len() as f64;
    let sd = (pooled.iter().map(|v| (v - m).powi(2)).sum::<f64>() / pooled.len() as f64).sqrt();
    assert!((m - rho).abs() < 3.0 * sd / ess(&prod).sqrt(), "E[ab] = {m}");
}

#[test]
fn replay_is_byte_identical() {
    let target = (3usize, |x: &[f64]| Some(-0.5 * x.iter().map(|v| v * v).sum::<f64>()));
    let inits = vec![vec![0.1; 3], vec![0.0; 3], vec![-0.1; 3]];
    let cfg = McmcConfig {
        iterations: 500,
        warmup: 300,
        ..McmcConfig::default()
    };
    let run = || {
        let names = vec!["a".into(), "b".into(), "c".into()];
        let d = sample(&target, names, &inits, &DMatrix::identity(3, 3), &cfg).unwrap();
        let mut out = Vec::new();
        d.write_long_csv(&mut out).unwrap();
        out
    };
    let first = run();
    assert_eq!(first, run());
    let other = McmcConfig { seed: cfg.seed + 1, ..cfg.clone() };
    let names = vec!["a".into(), "b".into(), "c".into()];
    let d = sample(&target, names, &inits, &DMatrix::identity(3, 3), &other).unwrap();
    let mut out = Vec::new();
    d.write_long_csv(&mut out).unwrap();
    assert_ne!(first, out);
}
