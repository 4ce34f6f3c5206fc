use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

const HEADER: &str = "k,n_evals,f_value,f_gap,sigma_err_fro,eta1,eta2,stage,wall_ms";

fn mines(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mines"))
        .args(args)
        .env_remove("MINES_SEED")
        .output()
        .expect("binary runs")
}

fn mines_env(args: &[&str], seed: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mines"))
        .args(args)
        .env("MINES_SEED", seed)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn hash(path: &Path) -> String {
    let bytes = fs::read(path).unwrap();
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn out_arg(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

#[test]
fn run_writes_one_row_per_iteration() {
    let tmp = TempDir::new().unwrap();
    let out = out_arg(&tmp, "run");
    let o = mines(&[
        "run", "--problem", "quadratic:d=5,kappa=100", "--algo", "mines", "--iters", "1000", "--seed", "7",
        "--alpha", "1e-3", "--out", &out,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("run/trace_r0.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], HEADER);
    assert_eq!(lines.len(), 1002);
    assert!(lines[1].starts_with("0,0,"));
    assert!(lines[1001].starts_with("1000,11000,"));
    // wall_ms is NA unless --timing, and eta columns are NA at k = 0.
    assert!(lines.iter().skip(1).all(|l| l.ends_with(",NA")));
    assert_eq!(lines[1].split(',').nth(5), Some("NA"));

    let summary = json(&tmp.path().join("run/summary.json"));
    assert_eq!(summary["total_queries"], 11000);
    assert!(summary["final_f_gap_mean"].as_f64().unwrap() > 0.0);
    assert!(summary["final_sigma_err_std"].is_number());
    let resolved = json(&tmp.path().join("run/config.resolved.json"));
    assert_eq!(resolved["seed"], 7);
    assert_eq!(resolved["batch"], 5);
    assert_eq!(resolved["eta2"], "inverse_k");
}

#[test]
fn missing_alpha_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let out = out_arg(&tmp, "x");
    let o = mines(&["run", "--problem", "quadratic:d=5,kappa=100", "--iters", "10", "--out", &out]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("alpha"));
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn config_errors_exit_one() {
    let tmp = TempDir::new().unwrap();
    let out = out_arg(&tmp, "x");
    let cases: [&[&str]; 6] = [
        &["run", "--alpha", "1e-3", "--out", &out],
        &["run", "--problem", "cubic:d=2", "--alpha", "1e-3", "--out", &out],
        &["run", "--problem", "quadratic:d=2", "--alpha", "1e-3", "--tau", "5", "--zeta", "1", "--out", &out],
        &["run", "--problem", "quadratic:d=2", "--alpha", "1e-3", "--eta1", "fast", "--out", &out],
        &["run", "--problem", "quadratic:d=2", "--alpha", "1e-3", "--replicates", "0", "--out", &out],
        &["run", "--problem", "quadratic:d=2", "--alpha", "1e-3", "--no-such-flag"],
    ];
    for args in cases {
        assert_eq!(code(&mines(args)), 1, "{args:?}");
    }
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"problem": "quadratic:d=2", "alpha": 1e-3, "colour": "blue"}"#).unwrap();
    let o = mines(&["run", "--config", bad.to_str().unwrap(), "--out", &out]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("colour"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let run = |name: &str, jobs: &str| {
        let out = out_arg(&tmp, name);
        let o = mines(&[
            "run", "--problem", "quadratic:d=4,kappa=50", "--iters", "300", "--seed", "11", "--alpha", "1e-3",
            "--replicates", "3", "--jobs", jobs, "--out", &out,
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    };
    run("a", "3");
    run("b", "1");
    for r in 0..3 {
        let f = format!("trace_r{r}.csv");
        assert_eq!(hash(&tmp.path().join("a").join(&f)), hash(&tmp.path().join("b").join(&f)));
    }
    // Replicates use distinct streams.
    assert_ne!(hash(&tmp.path().join("a/trace_r0.csv")), hash(&tmp.path().join("a/trace_r1.csv")));
}

#[test]
fn resolved_config_reproduces_the_run() {
    let tmp = TempDir::new().unwrap();
    let first = out_arg(&tmp, "first");
    let o = mines(&[
        "run", "--problem", "logsumexp:n=10,d=3,seed=2", "--alpha", "1e-2", "--iters", "150", "--seed", "5",
        "--eta1", "theory_local", "--switch-mode", "heuristic", "--out", &first,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let config = tmp.path().join("first/config.resolved.json");
    let second = out_arg(&tmp, "second");
    let o = mines(&["run", "--config", config.to_str().unwrap(), "--out", &second]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(hash(&tmp.path().join("first/trace_r0.csv")), hash(&tmp.path().join("second/trace_r0.csv")));
}

#[test]
fn seed_precedence_is_file_then_env_then_flag() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"problem": "quadratic:d=3", "alpha": 0.001, "iters": 5, "seed": 1}"#).unwrap();
    let cfg = cfg.to_str().unwrap();
    let seed_of = |o: &Output, name: &str| {
        assert_eq!(code(o), 0, "{}", stderr(o));
        json(&tmp.path().join(name).join("config.resolved.json"))["seed"].as_u64().unwrap()
    };
    let (a, b, c) = (out_arg(&tmp, "a"), out_arg(&tmp, "b"), out_arg(&tmp, "c"));
    assert_eq!(seed_of(&mines(&["run", "--config", cfg, "--out", &a]), "a"), 1);
    assert_eq!(seed_of(&mines_env(&["run", "--config", cfg, "--out", &b], "2"), "b"), 2);
    assert_eq!(seed_of(&mines_env(&["run", "--config", cfg, "--seed", "3", "--out", &c], "2"), "c"), 3);
    let o = mines_env(&["run", "--config", cfg, "--out", &a], "minus-one");
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("MINES_SEED"));
}

#[test]
fn baseline_traces_mark_missing_columns() {
    let tmp = TempDir::new().unwrap();
    let out = out_arg(&tmp, "nes");
    let o = mines(&[
        "run", "--problem", "quadratic:d=3", "--alpha", "1e-3", "--algo", "nes", "--baseline-eta", "0.01",
        "--iters", "20", "--out", &out, "--timing",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("nes/trace_r0.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 9);
        assert_eq!(cells[4], "NA");
        assert!(cells[8].parse::<f64>().is_ok());
    }
}

#[test]
fn runtime_failure_keeps_partial_outputs() {
    let tmp = TempDir::new().unwrap();
    let out = out_arg(&tmp, "boom");
    let o = mines(&[
        "run", "--problem", "quadratic:d=2", "--alpha", "1e-3", "--mu0", "1e200", "--iters", "50", "--out", &out,
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("boom/trace_r0.csv")).unwrap();
    assert!(csv.starts_with(HEADER));
    let summary = json(&tmp.path().join("boom/summary.json"));
    assert!(summary["errors"][0].as_str().unwrap().contains("non-finite"));
}

#[test]
fn compare_matches_budgets() {
    let tmp = TempDir::new().unwrap();
    let out = out_arg(&tmp, "cmp");
    let o = mines(&[
        "compare", "--problem", "quadratic:d=10,kappa=1000,rot=7", "--alpha", "1e-3", "--algos", "mines,rgf",
        "--budget", "20000", "--baseline-eta", "4.7e-4", "--replicates", "2", "--seed", "3", "--out", &out,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("cmp/compare.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("algo,replicate,n_evals,f_gap"));
    let mut max_evals = std::collections::BTreeMap::new();
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let evals: u64 = cells[2].parse().unwrap();
        let entry = max_evals.entry((cells[0].to_string(), cells[1].to_string())).or_insert(0);
        *entry = (*entry).max(evals);
    }
    assert_eq!(max_evals.len(), 4);
    for r in ["0", "1"] {
        let m = max_evals[&("mines".to_string(), r.to_string())];
        let g = max_evals[&("rgf".to_string(), r.to_string())];
        assert!(m <= 20000 && g <= 20000);
        // Within one MiNES iteration (2b + 1 = 21 queries).
        assert!(m.abs_diff(g) < 21, "{m} vs {g}");
    }
    assert!(tmp.path().join("cmp/trace_mines_r1.csv").exists());
}

#[test]
fn compare_needs_two_algorithms() {
    let tmp = TempDir::new().unwrap();
    let out = out_arg(&tmp, "cmp");
    let o = mines(&["compare", "--problem", "quadratic:d=2", "--alpha", "1e-3", "--algos", "mines", "--out", &out]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("algos"));
}

#[test]
fn diagnose_variance_floor() {
    let tmp = TempDir::new().unwrap();
    let report = tmp.path().join("vf.json");
    let o = mines(&["diagnose", "variance_floor", "--samples", "1000000", "--seed", "1", "--out", report.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&report);
    assert_eq!(r["suite"], "variance_floor");
    assert_eq!(r["pass"], true);
    let value = r["metrics"]["empirical"].as_f64().unwrap();
    assert!((16.65..=20.35).contains(&value), "{value}");
}

#[test]
fn diagnose_moments() {
    let tmp = TempDir::new().unwrap();
    let report = tmp.path().join("m.json");
    let o = mines(&["diagnose", "moments", "--d", "5", "--p", "3", "--out", report.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let value = json(&report)["metrics"]["empirical"].as_f64().unwrap();
    assert!((11.18..=22.63).contains(&value), "{value}");
}

#[test]
fn diagnose_exit_codes() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&mines(&["diagnose", "no_such_suite"])), 1);
    let report = tmp.path().join("u.json");
    let o = mines(&[
        "diagnose", "unbiasedness", "--drop-inverse-term", "--samples", "20000", "--out", report.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
    assert_eq!(json(&report)["pass"], false);
    for suite in ["unbiasedness", "fd_check", "projection"] {
        let path = tmp.path().join(format!("{suite}.json"));
        let o = mines(&["diagnose", suite, "--samples", "2000", "--out", path.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{suite}: {}", String::from_utf8_lossy(&o.stdout));
    }
}

#[test]
fn constants_table_and_warnings() {
    let base = [
        "constants", "--L", "10", "--sigma", "1", "--gamma", "0", "--d", "4", "--alpha", "1e-3", "--tau", "0.5",
        "--zeta", "20", "--delta", "0.05", "--K", "1000",
    ];
    let o = mines(&[&base[..], &["--b", "4"]].concat());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let c1_line = stdout.lines().find(|l| l.starts_with("c1 ")).unwrap();
    let c1: f64 = c1_line.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((c1 - 45.10).abs() < 0.01, "{c1}");
    for name in ["delta_alpha_1", "delta_alpha_2"] {
        let line = stdout.lines().find(|l| l.starts_with(name)).unwrap();
        assert_eq!(line.split_whitespace().nth(1), Some("0"));
    }

    let o = mines(&[&base[..], &["--b", "1"]].concat());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8(o.stdout).unwrap().contains("warning: C2NotPositive"));

    let o = mines(&base);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--b"));
}
