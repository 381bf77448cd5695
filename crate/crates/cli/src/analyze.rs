//! Analysis of one dataset by every requested method.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use pseudosurv::bayes::{fit_bayes_gmm, BayesGmmOptions, Prior, PriorSpec};
use pseudosurv::bench::{fit_cox, fit_pem, PemSpec};
use pseudosurv::design::{build_design_with, DesignMatrix, DesignOptions};
use pseudosurv::gee::{fit_gee, WorkingCorrelation};
use pseudosurv::gmm::{fit_gmm, BasisSet};
use pseudosurv::mcmc::{summarize, McmcConfig, ParamSummary, PosteriorDraws, PosteriorSummary, TailQuery};
use pseudosurv::pseudo::{pseudo_observations, PseudoObsMatrix};
use pseudosurv::sim::{Method, PointEstimate};
use pseudosurv::surv::{select_time_grid_with, SurvivalDataset};
use pseudosurv::FitResult;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{write_resolved, AnalysisConfig, ResolvedAnalysis};
use crate::data::{read_dataset, ColumnMap};
use crate::error::{CliError, CliResult};

/// One coefficient of one method, as written to `coefficients.csv`.
#[derive(Debug, Serialize)]
struct CoefRow<'a> {
    method: &'a str,
    parameter: &'a str,
    estimate: f64,
    se: f64,
    lower: f64,
    upper: f64,
    converged: bool,
}

struct MethodOutcome {
    method: Method,
    /// Position of the treatment coefficient in `names`.
    treatment: usize,
    names: Vec<String>,
    estimate: Vec<f64>,
    se: Vec<f64>,
    interval: Vec<(f64, f64)>,
    converged: bool,
    details: Value,
    draws: Option<PosteriorDraws>,
}

impl MethodOutcome {
    fn frequentist(method: Method, fit: &FitResult, treatment: usize, level: f64) -> Self {
        Self {
            method,
            treatment,
            names: fit.names.clone(),
            estimate: fit.beta.iter().copied().collect(),
            se: fit.se.iter().copied().collect(),
            interval: fit.wald_intervals(level),
            converged: fit.converged,
            details: json!({
                "iterations": fit.iterations,
                "score_norm": fit.score_norm,
                "objective": fit.objective,
                "correlation": fit.correlation,
                "message": fit.message,
            }),
            draws: None,
        }
    }

    fn bayesian(
        method: Method,
        summary: &PosteriorSummary,
        treatment: usize,
        point: PointEstimate,
        flagged: bool,
        extra: Value,
        draws: PosteriorDraws,
    ) -> Self {
        let pick = |p: &ParamSummary| match point {
            PointEstimate::Mean => p.mean,
            PointEstimate::Median => p.median,
        };
        Self {
            method,
            treatment,
            names: summary.params.iter().map(|p| p.name.clone()).collect(),
            estimate: summary.params.iter().map(pick).collect(),
            se: summary.params.iter().map(|p| p.sd).collect(),
            interval: summary.params.iter().map(|p| (p.lower, p.upper)).collect(),
            converged: !flagged,
            details: json!({ "posterior": summary, "flagged": flagged, "extra": extra }),
            draws: Some(draws),
        }
    }
}

struct PseudoInputs {
    y: PseudoObsMatrix,
    x: DesignMatrix,
}

fn mcmc_config(chains: usize, iterations: usize, warmup: usize, thin: usize, seed: u64) -> McmcConfig {
    McmcConfig {
        chains,
        iterations,
        warmup,
        thin,
        seed,
        ..McmcConfig::default()
    }
}

fn fit_method(
    method: Method,
    data: &SurvivalDataset,
    pseudo: Option<&PseudoInputs>,
    cfg: &AnalysisConfig,
    res: &ResolvedAnalysis,
) -> pseudosurv::Result<MethodOutcome> {
    let n_cov = data.covariates().map_or(0, |c| c.names.len());
    let cov_idx: Vec<usize> = (0..n_cov).collect();
    let tails = |param: usize| -> Vec<TailQuery> {
        cfg.tail_thresholds
            .iter()
            .map(|&threshold| TailQuery { param, threshold, upper: false })
            .collect()
    };
    let pseudo = || pseudo.expect("pseudo-observations prepared for pseudo-based methods");
    match method {
        Method::Cox => {
            let fit = fit_cox(data, &cov_idx)?;
            Ok(MethodOutcome::frequentist(method, &fit, 0, cfg.level))
        }
        Method::Gee => {
            let PseudoInputs { y, x } = pseudo();
            let wc = WorkingCorrelation::new(res.correlation, x.k(), None)?;
            let fit = fit_gee(y, x, &wc)?;
            Ok(MethodOutcome::frequentist(method, &fit, 1, cfg.level))
        }
        Method::Gmm => {
            let PseudoInputs { y, x } = pseudo();
            let fit = fit_gmm(y, x, &BasisSet::new(res.correlation, x.k()))?;
            Ok(MethodOutcome::frequentist(method, &fit, 1, cfg.level))
        }
        Method::BayesGmm => {
            let PseudoInputs { y, x } = pseudo();
            let prior = match (cfg.prior.as_str(), cfg.prior_scale) {
                (_, None) => PriorSpec::default_for(x.n(), x.p()),
                ("cauchy", Some(scale)) => PriorSpec::uniform(Prior::Cauchy { scale }, x.p())?,
                (_, Some(sd)) => PriorSpec::uniform(Prior::Normal { sd }, x.p())?,
            };
            let mcmc = mcmc_config(cfg.chains, cfg.iterations, cfg.warmup, cfg.thin, cfg.seed);
            let opts = BayesGmmOptions {
                level: cfg.level,
                tails: tails(1),
                ..BayesGmmOptions::default()
            };
            let fit = fit_bayes_gmm(y, x, &BasisSet::new(res.correlation, x.k()), &prior, &mcmc, &opts)?;
            let extra = json!({
                "priors": prior,
                "mcmc": mcmc,
                "epsilons": opts.epsilons,
                "inits": fit.inits,
                "advice": fit.advice,
            });
            Ok(MethodOutcome::bayesian(method, &fit.summary, 1, res.point, fit.flagged, extra, fit.draws))
        }
        Method::Pem => {
            let mut spec = PemSpec::from_data(data);
            spec.covariates = cov_idx;
            let mcmc = mcmc_config(
                cfg.chains,
                cfg.pem_iterations,
                cfg.pem_warmup,
                cfg.pem_thin,
                cfg.seed.wrapping_add(1),
            );
            let fit = fit_pem(data, spec.clone(), &mcmc, &tails(0))?;
            let m = fit.posterior.intervals();
            // the fit summarises at 95%; redo it at the requested level
            let summary = summarize(&fit.draws, &tails(m), cfg.level);
            let extra = json!({
                "cuts": fit.posterior.spec.cuts,
                "hazard_prior_rate": spec.hazard_prior_rate,
                "beta_sd": spec.beta_sd,
                "mcmc": mcmc,
                "warnings": fit.warnings,
            });
            Ok(MethodOutcome::bayesian(method, &summary, m, res.point, fit.flagged, extra, fit.draws))
        }
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(CliError::io(format!("creating {}", path.display())))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("writing {}: {e}", path.display()))
}

fn write_coefficients(path: &Path, outcomes: &[MethodOutcome]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for o in outcomes {
        for (j, name) in o.names.iter().enumerate() {
            w.serialize(CoefRow {
                method: o.method.tag(),
                parameter: name,
                estimate: o.estimate[j],
                se: o.se[j],
                lower: o.interval[j].0,
                upper: o.interval[j].1,
                converged: o.converged,
            })
            .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(CliError::io(format!("writing {}", path.display())))
}

fn write_forest(path: &Path, outcomes: &[MethodOutcome]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["method", "estimate", "lower", "upper"]).map_err(csv_err(path))?;
    for o in outcomes {
        let t = o.treatment;
        w.write_record([
            o.method.label().to_string(),
            o.estimate[t].to_string(),
            o.interval[t].0.to_string(),
            o.interval[t].1.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(CliError::io(format!("writing {}", path.display())))
}

pub fn run(cfg: AnalysisConfig) -> CliResult<()> {
    let res = cfg.resolve()?;
    let map = ColumnMap {
        time: cfg.time.clone(),
        status: cfg.status.clone(),
        arm: Some(cfg.arm.clone()),
        covariates: cfg.covariates.clone(),
    };
    let data = read_dataset(&res.input, &map)?;
    std::fs::create_dir_all(&cfg.out).map_err(CliError::io(format!("creating {}", cfg.out.display())))?;
    write_resolved(&cfg, &cfg.out)?;

    let needs_pseudo = res
        .methods
        .iter()
        .any(|m| matches!(m, Method::Gee | Method::Gmm | Method::BayesGmm));
    let (grid, pseudo) = if needs_pseudo {
        let grid = select_time_grid_with(&data, cfg.k, res.grid_rule)?;
        let y = pseudo_observations(&data, &grid)?;
        let opts = DesignOptions {
            standardize_covariates: cfg.standardize_covariates,
        };
        let x = build_design_with(&data, &grid, opts)?;
        (Some(grid), Some(PseudoInputs { y, x }))
    } else {
        (None, None)
    };

    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    let mut reports = Vec::new();
    for &method in &res.methods {
        match fit_method(method, &data, pseudo.as_ref(), &cfg, &res) {
            Ok(o) => {
                let t = o.treatment;
                if !o.converged {
                    failures.push(format!("{}: not converged", method.tag()));
                }
                reports.push(json!({
                    "method": method.tag(),
                    "converged": o.converged,
                    "log_hr": o.estimate[t],
                    "se": o.se[t],
                    "lower": o.interval[t].0,
                    "upper": o.interval[t].1,
                    "hazard_ratio": [o.estimate[t].exp(), o.interval[t].0.exp(), o.interval[t].1.exp()],
                    "details": o.details,
                }));
                outcomes.push(o);
            }
            Err(e) => {
                failures.push(format!("{}: {e}", method.tag()));
                reports.push(json!({ "method": method.tag(), "converged": false, "error": e.to_string() }));
            }
        }
    }

    write_coefficients(&cfg.out.join("coefficients.csv"), &outcomes)?;
    write_forest(&cfg.out.join("forest.csv"), &outcomes)?;
    if cfg.draws {
        for o in &outcomes {
            if let Some(d) = &o.draws {
                let path = cfg.out.join(match o.method {
                    Method::Pem => "pem-draws.csv",
                    _ => "draws.csv",
                });
                d.write_long_csv(create(&path)?)
                    .map_err(CliError::io(format!("writing {}", path.display())))?;
            }
        }
    }
    let summary = json!({
        "input": res.input,
        "n": data.len(),
        "events": data.n_events(),
        "censored_fraction": data.censoring_fraction(),
        "covariates": cfg.covariates,
        "grid": grid.as_ref().map(|g| g.points().to_vec()),
        "design": pseudo.as_ref().map(|p| json!({ "p": p.x.p(), "names": p.x.names() })),
        "point_estimate": cfg.point,
        "level": cfg.level,
        "methods": reports,
    });
    let path = cfg.out.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Data(e.to_string()))?;
    std::fs::write(&path, text).map_err(CliError::io(format!("writing {}", path.display())))?;

    println!("{:<14}{:>10}{:>10}{:>22}{:>8}", "method", "log HR", "se", "interval", "HR");
    for o in &outcomes {
        let t = o.treatment;
        println!(
            "{:<14}{:>10.4}{:>10.4}{:>22}{:>8.3}{}",
            o.method.label(),
            o.estimate[t],
            o.se[t],
            format!("[{:.4}, {:.4}]", o.interval[t].0, o.interval[t].1),
            o.estimate[t].exp(),
            if o.converged { "" } else { "  (not converged)" }
        );
    }
    println!("outputs written to {}", cfg.out.display());

    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Convergence(format!("some fits did not converge: {}", failures.join("; "))))
    }
}
