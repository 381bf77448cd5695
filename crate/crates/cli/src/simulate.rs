//! Monte Carlo runs over the named scenario grids.

use std::fmt::Write as _;

use pseudosurv::sim::{
    format_table, parse_methods, run_scenario, scenario_grid, sensitivity_grid, Scenario, ScenarioResult,
    SimSettings, METRICS_HEADER,
};

use crate::config::{parse_point, write_resolved, SimConfig};
use crate::error::{CliError, CliResult};

const GRIDS: &str = "core, table1, table2, table3, table4, ksens";

fn invalid(msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{msg}; allowed grids: {GRIDS}"))
}

/// Replications per scenario when none are given.
pub fn default_nsim(scale: &str, bayesian: bool) -> CliResult<usize> {
    match scale {
        "paper" => Ok(1000),
        "desk" => Ok(if bayesian { 50 } else { 200 }),
        other => Err(CliError::Usage(format!("unknown scale '{other}' (expected desk or paper)"))),
    }
}

fn records_csv(results: &[ScenarioResult]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Data(format!("records.csv: {e}"));
    w.write_record([
        "n",
        "censoring_rate",
        "log_hr",
        "k",
        "correlation",
        "rep",
        "seed",
        "method",
        "estimate",
        "se",
        "lower",
        "upper",
        "converged",
        "max_rhat",
        "censored_fraction",
        "message",
    ])
    .map_err(err)?;
    for r in results {
        let s = &r.scenario;
        for rec in &r.records {
            w.write_record([
                s.n.to_string(),
                s.censoring_rate.to_string(),
                s.log_hr.to_string(),
                s.k.to_string(),
                s.correlation.label().to_string(),
                rec.rep.to_string(),
                rec.seed.to_string(),
                rec.method.tag().to_string(),
                rec.estimate.to_string(),
                rec.se.to_string(),
                rec.lower.to_string(),
                rec.upper.to_string(),
                rec.converged.to_string(),
                rec.max_rhat.map(|v| v.to_string()).unwrap_or_default(),
                rec.censored_fraction.to_string(),
                rec.message.clone().unwrap_or_default(),
            ])
            .map_err(err)?;
        }
    }
    w.into_inner().map_err(|e| CliError::Data(format!("records.csv: {e}")))
}

pub fn run(mut cfg: SimConfig) -> CliResult<()> {
    let methods = parse_methods(&cfg.methods)?;
    let bayesian = methods.iter().any(|m| m.is_bayesian());
    let nsim = match cfg.nsim {
        Some(n) => n,
        None => default_nsim(&cfg.scale, bayesian)?,
    };
    cfg.nsim = Some(nsim);
    let base = Scenario {
        n: cfg.n,
        censoring_rate: cfg.censoring_rate,
        log_hr: cfg.log_hr,
        shape: cfg.shape,
        nsim,
        seed: cfg.seed,
        k: cfg.k,
        correlation: cfg.correlation.parse().map_err(invalid)?,
        grid_rule: cfg.grid_rule.parse().map_err(invalid)?,
    };
    let (scenarios, knob) = scenario_grid(&cfg.grid, &base).map_err(|e| CliError::Usage(e.to_string()))?;
    for s in &scenarios {
        s.validate().map_err(invalid)?;
    }
    let settings = SimSettings {
        point: parse_point(&cfg.point)?,
        threads: cfg.threads,
        ..SimSettings::desk_scale(methods)
    };

    std::fs::create_dir_all(&cfg.out).map_err(CliError::io(format!("creating {}", cfg.out.display())))?;
    write_resolved(&cfg, &cfg.out)?;

    let mut results = Vec::new();
    for s in &scenarios {
        match &knob {
            Some(k) => results.extend(sensitivity_grid(s, &settings, k)?),
            None => results.push(run_scenario(s, &settings)?),
        }
    }

    let mut metrics = String::from(METRICS_HEADER);
    metrics.push('\n');
    for r in &results {
        for row in &r.rows {
            let _ = writeln!(metrics, "{}", row.csv_line());
        }
    }
    let table = format_table(&results);
    let files: [(&str, Vec<u8>); 3] = [
        ("metrics.csv", metrics.into_bytes()),
        ("tables.txt", table.clone().into_bytes()),
        ("records.csv", records_csv(&results)?),
    ];
    for (name, bytes) in files {
        let path = cfg.out.join(name);
        std::fs::write(&path, bytes).map_err(CliError::io(format!("writing {}", path.display())))?;
    }
    print!("{table}");

    let flagged: Vec<String> = results
        .iter()
        .flat_map(|r| r.rows.iter().filter(|m| m.flagged).map(move |m| (r, m)))
        .map(|(r, m)| format!("{} at n={} ({}/{} failed)", m.method.tag(), r.scenario.n, m.failures, m.nsim))
        .collect();
    if flagged.is_empty() {
        Ok(())
    } else {
        Err(CliError::Convergence(format!(
            "more than 5% of fits failed for: {}",
            flagged.join(", ")
        )))
    }
}
