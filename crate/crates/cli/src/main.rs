//! `pseudosurv`: pseudo-observation survival analyses and simulations.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 convergence failure.

mod analyze;
mod config;
mod data;
mod error;
mod pseudo_cmd;
mod simulate;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{load, AnalysisConfig, SimConfig};
use data::ColumnMap;
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "pseudosurv", version, about = "Survival regression on jackknife pseudo-observations")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "PSEUDOSURV_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit every requested method to a CSV dataset.
    Analyze(AnalyzeArgs),
    /// Run a simulation grid and write metrics and tables.
    Simulate(SimulateArgs),
    /// Write the pseudo-observations of a CSV dataset in long format.
    Pseudo(PseudoCliArgs),
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// TOML file with analysis settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    time: Option<String>,
    #[arg(long)]
    status: Option<String>,
    #[arg(long)]
    arm: Option<String>,
    /// Comma-separated covariate columns.
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// Comma-separated subset of cox, gee, gmm, pem, bayes-gmm.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    /// IND, EXCH or AR1.
    #[arg(long)]
    correlation: Option<String>,
    /// event-quantiles or equal-time.
    #[arg(long)]
    grid_rule: Option<String>,
    #[arg(long)]
    standardize_covariates: bool,
    /// normal or cauchy.
    #[arg(long)]
    prior: Option<String>,
    #[arg(long)]
    prior_scale: Option<f64>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    pem_iterations: Option<usize>,
    #[arg(long)]
    pem_warmup: Option<usize>,
    #[arg(long)]
    pem_thin: Option<usize>,
    /// Comma-separated thresholds c for P(log HR < c).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    tail_thresholds: Option<Vec<f64>>,
    #[arg(long)]
    level: Option<f64>,
    /// mean or median.
    #[arg(long)]
    point: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write posterior draws.
    #[arg(long)]
    draws: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base scenario; only `core` is defined.
    #[arg(long)]
    scenario: Option<String>,
    /// core, table1, table2, table3, table4 or ksens.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    censoring_rate: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    log_hr: Option<f64>,
    #[arg(long)]
    shape: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    correlation: Option<String>,
    #[arg(long)]
    grid_rule: Option<String>,
    #[arg(long)]
    nsim: Option<usize>,
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    point: Option<String>,
    /// 200 replications (50 with Bayesian methods) per scenario.
    #[arg(long, conflicts_with = "paper_scale")]
    desk_scale: bool,
    /// 1000 replications per scenario.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PseudoCliArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "time")]
    time: String,
    #[arg(long, default_value = "status")]
    status: String,
    /// Optional; the arm does not enter the pseudo-observations.
    #[arg(long)]
    arm: Option<String>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value = "event-quantiles")]
    grid_rule: String,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn analysis_config(a: AnalyzeArgs, threads: Option<usize>) -> CliResult<AnalysisConfig> {
    let mut c: AnalysisConfig = load(a.config.as_deref())?;
    if a.input.is_some() {
        c.input = a.input;
    }
    set(&mut c.time, a.time);
    set(&mut c.status, a.status);
    set(&mut c.arm, a.arm);
    set(&mut c.covariates, a.covariates);
    set(&mut c.methods, a.methods);
    set(&mut c.k, a.k);
    set(&mut c.correlation, a.correlation);
    set(&mut c.grid_rule, a.grid_rule);
    c.standardize_covariates |= a.standardize_covariates;
    set(&mut c.prior, a.prior);
    if a.prior_scale.is_some() {
        c.prior_scale = a.prior_scale;
    }
    set(&mut c.chains, a.chains);
    set(&mut c.iterations, a.iterations);
    set(&mut c.warmup, a.warmup);
    set(&mut c.thin, a.thin);
    set(&mut c.pem_iterations, a.pem_iterations);
    set(&mut c.pem_warmup, a.pem_warmup);
    set(&mut c.pem_thin, a.pem_thin);
    set(&mut c.tail_thresholds, a.tail_thresholds);
    set(&mut c.level, a.level);
    set(&mut c.point, a.point);
    set(&mut c.out, a.out);
    set(&mut c.seed, a.seed);
    c.draws |= a.draws;
    if threads.is_some() {
        c.threads = threads;
    }
    Ok(c)
}

fn sim_config(a: SimulateArgs, threads: Option<usize>) -> CliResult<SimConfig> {
    let mut c: SimConfig = load(a.config.as_deref())?;
    if let Some(s) = a.scenario.as_deref().filter(|s| *s != "core") {
        return Err(CliError::Usage(format!(
            "unknown scenario '{s}'; the base scenario is 'core' (select a grid with --grid: core, table1, table2, table3, table4, ksens)"
        )));
    }
    set(&mut c.grid, a.grid);
    set(&mut c.n, a.n);
    set(&mut c.censoring_rate, a.censoring_rate);
    set(&mut c.log_hr, a.log_hr);
    set(&mut c.shape, a.shape);
    set(&mut c.k, a.k);
    set(&mut c.correlation, a.correlation);
    set(&mut c.grid_rule, a.grid_rule);
    if a.nsim.is_some() {
        c.nsim = a.nsim;
    }
    set(&mut c.methods, a.methods);
    set(&mut c.seed, a.seed);
    set(&mut c.point, a.point);
    if a.paper_scale {
        c.scale = "paper".into();
    } else if a.desk_scale {
        c.scale = "desk".into();
    }
    set(&mut c.out, a.out);
    if threads.is_some() {
        c.threads = threads;
    }
    Ok(c)
}

fn init_threads(threads: Option<usize>) -> CliResult<()> {
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Analyze(a) => {
            let cfg = analysis_config(a, cli.threads)?;
            init_threads(cfg.threads)?;
            analyze::run(cfg)
        }
        Command::Simulate(a) => {
            let cfg = sim_config(a, cli.threads)?;
            init_threads(cfg.threads)?;
            simulate::run(cfg)
        }
        Command::Pseudo(a) => {
            init_threads(cli.threads)?;
            pseudo_cmd::run(pseudo_cmd::PseudoArgs {
                input: a.input,
                map: ColumnMap {
                    time: a.time,
                    status: a.status,
                    arm: a.arm,
                    covariates: Vec::new(),
                },
                k: a.k,
                grid_rule: a.grid_rule.parse()?,
                out: a.out,
            })
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
