//! Multi-chain adaptive random-walk Metropolis with convergence diagnostics.
//!
//! The proposal covariance and global scale adapt during warm-up only
//! (Robbins-Monro on the scale towards the target acceptance rate, empirical
//! covariance of warm-up draws after `adapt_start` iterations) and are frozen
//! for the retained iterations. Targets may report points outside their
//! support; such proposals are rejected and counted.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

/// Unnormalised log density; `None` marks a point outside the support.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> Option<f64>;
}

impl<F> LogDensity for (usize, F)
where
    F: Fn(&[f64]) -> Option<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.0
    }

    fn log_density(&self, x: &[f64]) -> Option<f64> {
        (self.1)(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub chains: usize,
    /// Post-warm-up iterations per chain (before thinning).
    pub iterations: usize,
    pub warmup: usize,
    pub thin: usize,
    pub seed: u64,
    pub target_accept: f64,
    /// Warm-up iteration after which the proposal covariance is learned.
    pub adapt_start: usize,
    /// Learn the proposal covariance from warm-up draws; when false only the
    /// global scale adapts and the supplied covariance is kept.
    #[serde(default = "default_true")]
    pub adapt_covariance: bool,
}

fn default_true() -> bool {
    true
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            chains: 3,
            iterations: 5000,
            warmup: 1000,
            thin: 5,
            seed: 20240101,
            target_accept: 0.234,
            adapt_start: 200,
            adapt_covariance: true,
        }
    }
}

impl McmcConfig {
    pub fn retained_per_chain(&self) -> usize {
        self.iterations / self.thin.max(1)
    }

    fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.iterations == 0 || self.thin == 0 {
            return Err(Error::Config("chains, iterations and thin must be positive".into()));
        }
        if self.retained_per_chain() < 4 {
            return Err(Error::Config("fewer than 4 retained draws per chain".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config("target acceptance must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    /// One `retained × P` matrix per chain.
    pub chains: Vec<DMatrix<f64>>,
    pub warmup: usize,
    pub thin: usize,
    pub seed: u64,
    /// Post-warm-up acceptance rate per chain.
    pub acceptance: Vec<f64>,
    /// Proposals rejected for falling outside the support, per chain.
    pub out_of_support: Vec<usize>,
    /// Frozen proposal scale (multiplier of the adapted covariance) per chain.
    pub proposal_scale: Vec<f64>,
    pub rhat: Vec<f64>,
    pub ess_bulk: Vec<f64>,
    pub ess_tail: Vec<f64>,
}

impl PosteriorDraws {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn draws_per_chain(&self) -> usize {
        self.chains[0].nrows()
    }

    /// Draws of parameter `p`, one vector per chain.
    pub fn parameter(&self, p: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.column(p).iter().copied().collect()).collect()
    }

    /// All chains pooled for parameter `p`.
    pub fn pooled(&self, p: usize) -> Vec<f64> {
        self.parameter(p).concat()
    }

    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Long-format CSV: `chain,iter,parameter,value`.
    pub fn write_long_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "chain,iter,parameter,value")?;
        for (c, m) in self.chains.iter().enumerate() {
            for it in 0..m.nrows() {
                for (p, name) in self.names.iter().enumerate() {
                    writeln!(out, "{},{},{},{}", c + 1, (it + 1) * self.thin, name, m[(it, p)])?;
                }
            }
        }
        Ok(())
    }
}

/// Pseudo-draws per dimension given to the initial covariance during adaptation.
const SHRINK_PER_DIM: f64 = 10.0;

struct ChainOutput {
    draws: DMatrix<f64>,
    acceptance: f64,
    out_of_support: usize,
    scale: f64,
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

fn proposal_factor(cov: &DMatrix<f64>, d: usize) -> Option<DMatrix<f64>> {
    let scaled = cov * (2.38 * 2.38 / d as f64) + DMatrix::identity(d, d) * 1e-12;
    scaled.cholesky().map(|c| c.l())
}

fn empirical_cov(history: &[Vec<f64>]) -> DMatrix<f64> {
    let d = history[0].len();
    let n = history.len() as f64;
    let mut mean = DVector::zeros(d);
    for h in history {
        mean += DVector::from_column_slice(h);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for h in history {
        let c = DVector::from_column_slice(h) - &mean;
        cov += &c * c.transpose();
    }
    cov / (n - 1.0).max(1.0)
}

fn run_chain<T: LogDensity + ?Sized>(
    target: &T,
    init: &[f64],
    cfg: &McmcConfig,
    chain: usize,
    initial_cov: &DMatrix<f64>,
) -> Result<ChainOutput> {
    let d = target.dim();
    let mut rng = chain_rng(cfg.seed, chain);
    let mut x = init.to_vec();
    let mut lp = target
        .log_density(&x)
        .filter(|v| v.is_finite())
        .ok_or(Error::InitOutsideSupport { chain })?;
    let mut factor = proposal_factor(initial_cov, d)
        .ok_or_else(|| Error::Config("initial proposal covariance is not positive definite".into()))?;
    let mut log_scale = 0.0f64;
    let mut history: Vec<Vec<f64>> = Vec::with_capacity(cfg.warmup);
    let cov_freeze = cfg.warmup * 4 / 5;
    let mut warm_accepts = 0usize;
    let mut post_accepts = 0usize;
    let mut out_of_support = 0usize;
    let retained = cfg.retained_per_chain();
    let mut draws = DMatrix::zeros(retained, d);
    let total = cfg.warmup + retained * cfg.thin;
    let mut z = DVector::zeros(d);
    let mut prop = vec![0.0; d];
    for t in 0..total {
        for v in z.iter_mut() {
            *v = rng.sample::<f64, _>(StandardNormal);
        }
        let step = &factor * &z;
        let s = log_scale.exp();
        for j in 0..d {
            prop[j] = x[j] + s * step[j];
        }
        let accept_prob = match target.log_density(&prop) {
            Some(v) if v.is_finite() => (v - lp).exp().min(1.0),
            _ => {
                out_of_support += 1;
                0.0
            }
        };
        let u: f64 = rng.gen();
        if u < accept_prob {
            x.copy_from_slice(&prop);
            lp = target.log_density(&x).unwrap_or(lp);
            if t < cfg.warmup {
                warm_accepts += 1;
            } else {
                post_accepts += 1;
            }
        }
        if t < cfg.warmup {
            let gamma = ((t + 1) as f64).powf(-0.6);
            log_scale = (log_scale + gamma * (accept_prob - cfg.target_accept)).clamp(-12.0, 6.0);
            history.push(x.clone());
            let done = t + 1;
            if cfg.adapt_covariance && done >= cfg.adapt_start && done <= cov_freeze && done % 50 == 0 {
                let recent = &history[done / 2..];
                if recent.len() > d + 1 {
                    // shrink towards the initial covariance while draws are few
                    let w = recent.len() as f64;
                    let n0 = SHRINK_PER_DIM * d as f64;
                    let cov = (empirical_cov(recent) * w + initial_cov * n0) / (w + n0);
                    if let Some(f) = proposal_factor(&cov, d) {
                        factor = f;
                    }
                }
            }
            if done == cfg.warmup && warm_accepts == 0 {
                return Err(Error::NoAcceptance { chain });
            }
        } else {
            let post = t - cfg.warmup + 1;
            if post.is_multiple_of(cfg.thin) {
                let row = post / cfg.thin - 1;
                for j in 0..d {
                    draws[(row, j)] = x[j];
                }
            }
        }
    }
    Ok(ChainOutput {
        draws,
        acceptance: post_accepts as f64 / (retained * cfg.thin) as f64,
        out_of_support,
        scale: log_scale.exp(),
    })
}

/// Runs `inits.len()` chains (must equal `config.chains`) in parallel.
pub fn sample<T: LogDensity + ?Sized>(
    target: &T,
    names: Vec<String>,
    inits: &[Vec<f64>],
    initial_cov: &DMatrix<f64>,
    config: &McmcConfig,
) -> Result<PosteriorDraws> {
    config.validate()?;
    let d = target.dim();
    if inits.len() != config.chains {
        return Err(Error::Config(format!(
            "{} initial values for {} chains",
            inits.len(),
            config.chains
        )));
    }
    if names.len() != d || inits.iter().any(|v| v.len() != d) || initial_cov.shape() != (d, d) {
        return Err(Error::Dimension(format!("target dimension is {d}")));
    }
    let outputs: Vec<ChainOutput> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(target, &inits[c], config, c, initial_cov))
        .collect::<Result<_>>()?;
    let chains: Vec<DMatrix<f64>> = outputs.iter().map(|o| o.draws.clone()).collect();
    let mut rhat = Vec::with_capacity(d);
    let mut ess_b = Vec::with_capacity(d);
    let mut ess_t = Vec::with_capacity(d);
    for p in 0..d {
        let per_chain: Vec<Vec<f64>> = chains.iter().map(|c| c.column(p).iter().copied().collect()).collect();
        rhat.push(rank_normalized_rhat(&per_chain));
        ess_b.push(ess_bulk(&per_chain));
        ess_t.push(ess_tail(&per_chain));
    }
    Ok(PosteriorDraws {
        names,
        chains,
        warmup: config.warmup,
        thin: config.thin,
        seed: config.seed,
        acceptance: outputs.iter().map(|o| o.acceptance).collect(),
        out_of_support: outputs.iter().map(|o| o.out_of_support).collect(),
        proposal_scale: outputs.iter().map(|o| o.scale).collect(),
        rhat,
        ess_bulk: ess_b,
        ess_tail: ess_t,
    })
}

fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Classic potential scale reduction on already split chains.
fn psrf(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let grand = mean(&means);
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = chains.iter().map(|c| variance(c)).sum::<f64>() / m;
    if w <= 0.0 {
        return if b <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Average ranks of all draws pooled over chains, mapped to normal scores.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let total: usize = chains.iter().map(|c| c.len()).sum();
    let mut idx: Vec<(f64, usize, usize)> = Vec::with_capacity(total);
    for (ci, c) in chains.iter().enumerate() {
        for (j, &v) in c.iter().enumerate() {
            idx.push((v, ci, j));
        }
    }
    idx.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let normal = Normal::new(0.0, 1.0).unwrap();
    let s = total as f64;
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j + 1 < total && idx[j + 1].0 == idx[i].0 {
            j += 1;
        }
        let rank = 0.5 * ((i + 1) as f64 + (j + 1) as f64);
        let z = normal.inverse_cdf((rank - 0.375) / (s + 0.25));
        for item in &idx[i..=j] {
            out[item.1][item.2] = z;
        }
        i = j + 1;
    }
    out
}

fn median(v: &[f64]) -> f64 {
    quantile(v, 0.5)
}

/// Rank-normalized split R-hat: the larger of the bulk and folded versions.
pub fn rank_normalized_rhat(chains: &[Vec<f64>]) -> f64 {
    let split = split_chains(chains);
    let bulk = psrf(&rank_normalize(&split));
    let pooled: Vec<f64> = chains.concat();
    let med = median(&pooled);
    let folded: Vec<Vec<f64>> = split
        .iter()
        .map(|c| c.iter().map(|v| (v - med).abs()).collect())
        .collect();
    let tail = psrf(&rank_normalize(&folded));
    bulk.max(tail)
}

/// Split R-hat without rank normalisation.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    psrf(&split_chains(chains))
}

fn autocov(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    let m = mean(x);
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

/// Multi-chain effective sample size with Geyer's initial monotone sequence.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len();
    let nf = n as f64;
    if n < 4 {
        return m * nf;
    }
    let acov0: Vec<f64> = chains.iter().map(|c| autocov(c, 0)).collect();
    let chain_var: Vec<f64> = acov0.iter().map(|a| a * nf / (nf - 1.0)).collect();
    let w = mean(&chain_var);
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let b_over_n = if chains.len() > 1 { variance(&means) } else { 0.0 };
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    if var_plus <= 0.0 {
        return m * nf;
    }
    let rho = |lag: usize| -> f64 {
        let mean_acov = chains.iter().map(|c| autocov(c, lag)).sum::<f64>() / m;
        1.0 - (w - mean_acov) / var_plus
    };
    let mut sum_pairs = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let r0 = if t == 0 { 1.0 } else { rho(t) };
        let r1 = rho(t + 1);
        let mut pair = r0 + r1;
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev_pair);
        prev_pair = pair;
        sum_pairs += pair;
        t += 2;
    }
    let tau = (-1.0 + 2.0 * sum_pairs).max(1.0 / (m * nf).log10().max(1.0));
    (m * nf / tau).min(m * nf * (m * nf).log10())
}

/// Bulk ESS: ESS of the rank-normalized split chains.
pub fn ess_bulk(chains: &[Vec<f64>]) -> f64 {
    ess(&rank_normalize(&split_chains(chains)))
}

/// Tail ESS: minimum ESS of the 5% and 95% quantile indicators.
pub fn ess_tail(chains: &[Vec<f64>]) -> f64 {
    let split = split_chains(chains);
    let pooled = split.concat();
    let lo = quantile(&pooled, 0.05);
    let hi = quantile(&pooled, 0.95);
    let ind = |c: f64, below: bool| -> Vec<Vec<f64>> {
        split
            .iter()
            .map(|ch| {
                ch.iter()
                    .map(|&v| if (v <= c) == below { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect()
    };
    ess(&ind(lo, true)).min(ess(&ind(hi, true)))
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], prob: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (v.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
    pub mcse_mean: f64,
    pub rhat: f64,
    pub ess_bulk: f64,
    pub ess_tail: f64,
}

/// `P(θ_param < threshold)` (or `>` when `upper` is set).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailQuery {
    pub param: usize,
    pub threshold: f64,
    pub upper: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailProbability {
    pub name: String,
    pub threshold: f64,
    pub upper: bool,
    pub probability: f64,
    pub mcse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub level: f64,
    pub params: Vec<ParamSummary>,
    pub tails: Vec<TailProbability>,
    pub max_rhat: f64,
    pub acceptance: Vec<f64>,
    pub out_of_support: Vec<usize>,
}

pub fn summarize(draws: &PosteriorDraws, tails: &[TailQuery], level: f64) -> PosteriorSummary {
    let a = 0.5 * (1.0 - level);
    let params = (0..draws.dim())
        .map(|p| {
            let per_chain = draws.parameter(p);
            let pooled = per_chain.concat();
            let sd = variance(&pooled).sqrt();
            let ess_raw = ess(&per_chain);
            ParamSummary {
                name: draws.names[p].clone(),
                mean: mean(&pooled),
                median: median(&pooled),
                sd,
                lower: quantile(&pooled, a),
                upper: quantile(&pooled, 1.0 - a),
                mcse_mean: sd / ess_raw.sqrt(),
                rhat: draws.rhat[p],
                ess_bulk: draws.ess_bulk[p],
                ess_tail: draws.ess_tail[p],
            }
        })
        .collect();
    let tails = tails
        .iter()
        .map(|q| {
            let per_chain = draws.parameter(q.param);
            let ind: Vec<Vec<f64>> = per_chain
                .iter()
                .map(|c| {
                    c.iter()
                        .map(|&v| {
                            let hit = if q.upper { v > q.threshold } else { v < q.threshold };
                            if hit {
                                1.0
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect();
            let pooled = ind.concat();
            let prob = mean(&pooled);
            let mcse = if prob <= 0.0 || prob >= 1.0 {
                0.0
            } else {
                (prob * (1.0 - prob) / ess(&ind)).sqrt()
            };
            TailProbability {
                name: draws.names[q.param].clone(),
                threshold: q.threshold,
                upper: q.upper,
                probability: prob,
                mcse,
            }
        })
        .collect();
    PosteriorSummary {
        level,
        params,
        tails,
        max_rhat: draws.max_rhat(),
        acceptance: draws.acceptance.clone(),
        out_of_support: draws.out_of_support.clone(),
    }
}
