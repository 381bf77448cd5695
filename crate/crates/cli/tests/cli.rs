use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pseudosurv::sim::{calibrate_censoring, generate_trial, Scenario};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pseudosurv"));
    cmd.env_remove("PSEUDOSURV_THREADS");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn example() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/example_trial.csv")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["simulate", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_smoke_emits_three_rows() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "simulate", "--scenario", "core", "--nsim", "200", "--methods", "cox,gee,gmm", "--out", s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 4);
    for (line, tag) in lines[1..].iter().zip(["cox", "gee", "gmm"]) {
        assert!(line.starts_with(&format!("{tag},500,0.2,-0.3,5,IND,200,")), "{line}");
    }
    let table = fs::read_to_string(dir.path().join("tables.txt")).unwrap();
    assert!(table.contains("Frequentist") && !table.contains("Bayesian GMM"));
    let records = fs::read_to_string(dir.path().join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 1 + 3 * 200);
    assert!(dir.path().join("resolved-config.toml").exists());
}

#[test]
fn simulate_is_byte_identical_for_a_seed() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let common = ["simulate", "--nsim", "30", "--methods", "cox,gee,gmm", "--seed", "7"];
    let first = bin().args(common).args(["--out", s(a.path())]).output().unwrap();
    let second = bin()
        .args(common)
        .args(["--out", s(b.path()), "--threads", "2"])
        .output()
        .unwrap();
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    assert_eq!(second.status.code(), Some(0), "{}", stderr(&second));
    for f in ["metrics.csv", "records.csv", "tables.txt"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn table1_grid_has_five_sizes_by_five_methods() {
    let dir = TempDir::new().unwrap();
    let out = run(&["simulate", "--grid", "table1", "--desk-scale", "--nsim", "2", "--out", s(dir.path())]);
    // two replications can flag a method, which is reported as exit code 3
    assert!(matches!(out.status.code(), Some(0 | 3)), "{}", stderr(&out));
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let rows: Vec<Vec<&str>> = metrics.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 25);
    let sizes: Vec<&str> = rows.iter().step_by(5).map(|r| r[1]).collect();
    assert_eq!(sizes, ["50", "100", "200", "500", "1000"]);
    let methods: Vec<&str> = rows[..5].iter().map(|r| r[0]).collect();
    assert_eq!(methods, ["cox", "gee", "gmm", "pem", "bayes-gmm"]);
    let resolved = fs::read_to_string(dir.path().join("resolved-config.toml")).unwrap();
    assert!(resolved.contains("nsim = 2") && resolved.contains("scale = \"desk\""));
}

#[test]
fn invalid_grid_and_scenario_values_list_allowed_grids() {
    let dir = TempDir::new().unwrap();
    for args in [
        vec!["simulate", "--grid", "table9"],
        vec!["simulate", "--censoring-rate", "1.5"],
        vec!["simulate", "--n", "7"],
        vec!["simulate", "--scenario", "huge"],
    ] {
        let out = bin().args(&args).args(["--out", s(dir.path())]).output().unwrap();
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(stderr(&out).contains("table1"), "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn empty_method_list_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    for m in ["", ",", " , "] {
        let out = run(&["analyze", "--input", s(&example()), "--methods", m, "--out", s(dir.path())]);
        assert_eq!(out.status.code(), Some(1), "'{m}'");
        assert!(stderr(&out).contains("empty"));
        let out = run(&["simulate", "--methods", m, "--out", s(dir.path())]);
        assert_eq!(out.status.code(), Some(1), "'{m}'");
    }
}

#[test]
fn non_finite_threshold_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "analyze", "--input", s(&example()), "--methods", "cox", "--tail-thresholds", "0,inf", "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("not finite"));
}

#[test]
fn pseudo_on_uncensored_data_gives_indicators() {
    let dir = TempDir::new().unwrap();
    let input = write(dir.path(), "toy.csv", "time,status\n3,1\n1,1\n4,1\n2,1\n6,1\n5,1\n");
    let dest = dir.path().join("pseudo.csv");
    let out = run(&["pseudo", "--input", s(&input), "--k", "3", "--out", s(&dest)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = fs::read_to_string(&dest).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("subject,time,value"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| {
            let f: Vec<f64> = l.split(',').map(|v| v.parse().unwrap()).collect();
            assert_eq!(f.len(), 3);
            f
        })
        .collect();
    assert_eq!(rows.len(), 6 * 3);
    let times = [3.0, 1.0, 4.0, 2.0, 6.0, 5.0];
    for r in &rows {
        let expect = f64::from(u8::from(times[r[0] as usize - 1] > r[1]));
        assert!((r[2] - expect).abs() < 1e-12, "{r:?}");
    }
}

#[test]
fn pseudo_writes_to_stdout_by_default() {
    let dir = TempDir::new().unwrap();
    let input = write(dir.path(), "toy.csv", "time,status,arm\n1,1,0\n2,0,1\n3,1,1\n4,1,0\n");
    let out = run(&["pseudo", "--input", s(&input), "--k", "2", "--arm", "arm"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1 + 4 * 2);
}

#[test]
fn too_few_subjects_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let two = write(dir.path(), "two.csv", "time,status\n1,1\n2,1\n");
    let out = run(&["pseudo", "--input", s(&two)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("distinct event times"), "{}", stderr(&out));
    let one = write(dir.path(), "one.csv", "time,status\n1,1\n");
    let out = run(&["pseudo", "--input", s(&one), "--k", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("at least 2 subjects"), "{}", stderr(&out));
}

#[test]
fn malformed_rows_report_line_numbers() {
    let dir = TempDir::new().unwrap();
    let cases = [
        ("time,status\n1,1\n2,1\nx,0\n", "line 4"),
        ("time,status\n1,1\n2,2\n", "line 3"),
        ("time,status\n1,1\n2,1,5\n", "line 3"),
        ("time,status\n1,1\n-2,1\n", "line 3"),
        ("time,status\n1,1\n2,\n", "line 3"),
    ];
    for (text, needle) in cases {
        let input = write(dir.path(), "bad.csv", text);
        let out = run(&["pseudo", "--input", s(&input), "--k", "1"]);
        assert_eq!(out.status.code(), Some(2), "{text:?}");
        assert!(stderr(&out).contains(needle), "{text:?}: {}", stderr(&out));
    }
}

#[test]
fn missing_column_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "analyze", "--input", s(&example()), "--covariates", "weight", "--methods", "cox", "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("'weight'"), "{}", stderr(&out));
    let out = run(&["pseudo", "--input", s(&example()), "--time", "days"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn coefficient_csv_round_trips() {
    let dir = TempDir::new().unwrap();
    let out = run(&["analyze", "--input", s(&example()), "--methods", "cox,gee,gmm", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let summary = read_json(&dir.path().join("summary.json"));
    let mut reader = csv::Reader::from_path(dir.path().join("coefficients.csv")).unwrap();
    assert_eq!(
        reader.headers().unwrap(),
        vec!["method", "parameter", "estimate", "se", "lower", "upper", "converged"]
    );
    let mut rows = 0;
    for rec in reader.records() {
        let rec = rec.unwrap();
        rows += 1;
        for field in 2..6 {
            let v: f64 = rec[field].parse().unwrap();
            assert_eq!(v.to_string(), &rec[field]);
        }
        if rec[1] == *"treatment" {
            let report = summary["methods"]
                .as_array()
                .unwrap()
                .iter()
                .find(|m| m["method"] == rec[0])
                .unwrap();
            let est: f64 = rec[2].parse().unwrap();
            assert_eq!(est.to_bits(), report["log_hr"].as_f64().unwrap().to_bits());
        }
    }
    // Cox has one coefficient, GEE and GMM have K+1 = 6
    assert_eq!(rows, 1 + 6 + 6);
    let forest = fs::read_to_string(dir.path().join("forest.csv")).unwrap();
    assert_eq!(forest.lines().next(), Some("method,estimate,lower,upper"));
    assert_eq!(forest.lines().count(), 4);
}

#[test]
fn covariate_grows_the_design() {
    let plain = TempDir::new().unwrap();
    let adj = TempDir::new().unwrap();
    let input = example();
    let base = ["analyze", "--input", s(&input), "--methods", "cox,gee,gmm"];
    let a = bin().args(base).args(["--out", s(plain.path())]).output().unwrap();
    let b = bin()
        .args(base)
        .args(["--covariates", "age_over_14", "--out", s(adj.path())])
        .output()
        .unwrap();
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(b.status.code(), Some(0), "{}", stderr(&b));
    let pa = read_json(&plain.path().join("summary.json"))["design"]["p"].as_u64().unwrap();
    let pb = read_json(&adj.path().join("summary.json"))["design"]["p"].as_u64().unwrap();
    assert_eq!((pa, pb), (6, 7));
    let coefs = fs::read_to_string(adj.path().join("coefficients.csv")).unwrap();
    for m in ["cox", "gee", "gmm"] {
        assert!(coefs.contains(&format!("{m},age_over_14,")), "{m}");
    }
}

#[test]
fn config_file_is_overridden_by_flags_and_resolved() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "analysis.toml",
        &format!("input = {:?}\nmethods = \"cox\"\nk = 3\nlevel = 0.9\n", example().to_str().unwrap()),
    );
    let out_dir = dir.path().join("out");
    let out = run(&["analyze", "--config", s(&cfg), "--methods", "cox,gee", "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let resolved: toml::Value = fs::read_to_string(out_dir.join("resolved-config.toml")).unwrap().parse().unwrap();
    assert_eq!(resolved["methods"].as_str(), Some("cox,gee"));
    assert_eq!(resolved["k"].as_integer(), Some(3));
    assert_eq!(resolved["level"].as_float(), Some(0.9));
    let grid = &read_json(&out_dir.join("summary.json"))["grid"];
    assert_eq!(grid.as_array().unwrap().len(), 3);

    let bad = write(dir.path(), "bad.toml", "colour = \"blue\"\n");
    let out = run(&["analyze", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unconverged_chains_exit_with_code_three() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "analyze", "--input", s(&example()), "--methods", "bayes-gmm", "--iterations", "12", "--warmup", "10",
        "--thin", "1", "--draws", "--out", s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("bayes-gmm"));
    // outputs are still written
    let summary = read_json(&dir.path().join("summary.json"));
    assert_eq!(summary["methods"][0]["converged"], Value::Bool(false));
    let draws = fs::read_to_string(dir.path().join("draws.csv")).unwrap();
    assert_eq!(draws.lines().next(), Some("chain,iter,parameter,value"));
}

#[test]
fn bayesian_outputs_include_tails_and_diagnostics() {
    let dir = TempDir::new().unwrap();
    let out = run(&["analyze", "--input", s(&example()), "--methods", "pem,bayes-gmm", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let summary = read_json(&dir.path().join("summary.json"));
    for m in summary["methods"].as_array().unwrap() {
        let post = &m["details"]["posterior"];
        let tails = post["tails"].as_array().unwrap();
        assert_eq!(tails.len(), 2);
        assert_eq!(tails[0]["name"], "treatment");
        assert!((tails[1]["threshold"].as_f64().unwrap() - 1.43f64.ln()).abs() < 1e-15);
        for t in tails {
            let p = t["probability"].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&p) && t["mcse"].as_f64().unwrap() >= 0.0);
        }
        assert!(post["max_rhat"].as_f64().unwrap() < 1.01);
    }
}

/// Datasets from the core scenario analysed by all five methods: the
/// intervals overlap and cover the true log hazard ratio at about the nominal rate.
#[test]
fn core_datasets_give_consistent_intervals() {
    let scenario = Scenario::core();
    let b = calibrate_censoring(&scenario).unwrap();
    let dir = TempDir::new().unwrap();
    let runs = 20;
    let mut covered = [0usize; 5];
    for rep in 0..runs {
        let data = generate_trial(&scenario, b, scenario.replication_seed(rep)).unwrap();
        let mut csv = String::from("time,status,arm\n");
        for i in 0..data.len() {
            csv.push_str(&format!("{},{},{}\n", data.time()[i], u8::from(data.event()[i]), data.arm()[i]));
        }
        let input = write(dir.path(), "trial.csv", &csv);
        let out_dir = dir.path().join(format!("rep{rep}"));
        let out = run(&["analyze", "--input", s(&input), "--seed", &rep.to_string(), "--out", s(&out_dir)]);
        assert_eq!(out.status.code(), Some(0), "rep {rep}: {}", stderr(&out));
        let mut reader = csv::Reader::from_path(out_dir.join("forest.csv")).unwrap();
        let ci: Vec<(f64, f64)> = reader
            .records()
            .map(|r| {
                let r = r.unwrap();
                (r[2].parse().unwrap(), r[3].parse().unwrap())
            })
            .collect();
        assert_eq!(ci.len(), 5);
        let max_lower = ci.iter().map(|c| c.0).fold(f64::MIN, f64::max);
        let min_upper = ci.iter().map(|c| c.1).fold(f64::MAX, f64::min);
        assert!(max_lower < min_upper, "rep {rep}: intervals do not overlap {ci:?}");
        for (j, c) in ci.iter().enumerate() {
            covered[j] += usize::from(c.0 <= scenario.log_hr && scenario.log_hr <= c.1);
        }
    }
    // P(X ≤ 15) < 0.003 for X ~ Bin(20, 0.95)
    assert!(covered.iter().all(|&c| c >= 16), "{covered:?}");
}
