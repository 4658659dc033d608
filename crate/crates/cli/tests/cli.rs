use std::fs;
use std::path::Path;
use std::process::Command as Proc;

use chainsde_cli::{exit_code, run, Check, Command, ExperimentConfig, RunOptions};
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_chainsde");

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn opts(dir: &Path, workers: usize) -> RunOptions {
    RunOptions { out: dir.to_path_buf(), workers: Some(workers) }
}

#[test]
fn null_coupling_exits_zero_with_zero_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_text("command = couple\nperturbation = jitter:0\nm = 16\nlevel = 10\n").unwrap();
    let res = run(&cfg, &opts(dir.path(), 2));
    assert_eq!(exit_code(&res), 0);
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("t,d,d_abs,stderr,count"));
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[1], "0.0", "{line}");
    }
}

#[test]
fn zero_noise_bounds_have_nonnegative_margins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_text("command = bounds\nzero_noise = true\ny0 = 0.5\nn = 3\nhorizon = t0n\nlevel = 8\nm = 3\n")
        .unwrap();
    let res = run(&cfg, &opts(dir.path(), 1));
    assert_eq!(exit_code(&res), 0);
    let s = summary(dir.path());
    assert_eq!(s["results"]["case"], "I");
    for (_, v) in s["results"]["inequalities"].as_object().unwrap() {
        assert!(v["worst_margin"].as_f64().unwrap() >= 0.0);
        assert_eq!(v["pass_rate"].as_f64(), Some(1.0));
    }
}

#[test]
fn converge_reports_order_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_text("command = converge\nlevels = 6,8,10\nl_ref = 12\nm = 40\nseed = 3\n").unwrap();
    assert_eq!(exit_code(&run(&cfg, &opts(dir.path(), 4))), 0);
    let s = summary(dir.path());
    assert_eq!(s["results"]["errors"].as_array().unwrap().len(), 3);
    assert!(s["results"]["order"].as_f64().unwrap() > 0.0);
    assert_eq!(s["results"]["exact"], false);
}

#[test]
fn echoed_config_reparses_to_equal_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_text(
        "command = excursions\nalpha = 0.85\nx0 = 0\ny0 = 0\nz0 = -1\nn = 3\nlevel = 9\nhorizon = 2.5\nm = 7\nseed = 99\norigin_eps = 1e-4\n",
    )
    .unwrap();
    run(&cfg, &opts(dir.path(), 1)).unwrap();
    let s = summary(dir.path());
    let text: String = s["config"]
        .as_object()
        .unwrap()
        .iter()
        .map(|(k, v)| format!("{k} = {}\n", v.as_str().unwrap()))
        .collect();
    assert_eq!(ExperimentConfig::from_text(&text).unwrap(), cfg);
}

#[test]
fn invalid_config_exits_two_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = Proc::new(BIN)
        .args(["bounds", "--out"])
        .arg(dir.path())
        .args(["x0=0.25", "m=2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`x0`"));
    let out = Proc::new(BIN).args(["couple", "--out"]).arg(dir.path()).arg("perturbation=resolution:4,4").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`perturbation`"));
    let out = Proc::new(BIN).args(["simulate", "--out"]).arg(dir.path()).arg("levelz=3").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failed_check_maps_to_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_text("m = 1\nlevel = 4\n").unwrap();
    let mut outcome = run(&cfg, &opts(dir.path(), 1)).unwrap();
    assert_eq!(exit_code(&Ok(outcome.clone())), 0);
    outcome.checks.push(Check { name: "synthetic".into(), passed: false, detail: String::new() });
    assert_eq!(exit_code(&Ok(outcome)), 1);
}

#[test]
fn config_file_and_overrides_compose() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("exp.cfg");
    fs::write(&file, "command = simulate\nm = 3\nlevel = 6\nchain_order = 2\nx0 = 0\ny0 = 1\n").unwrap();
    let out_dir = dir.path().join("out");
    let status = Proc::new(BIN)
        .args(["run", "--config"])
        .arg(&file)
        .arg("--out")
        .arg(&out_dir)
        .arg("seed=5")
        .env("CHAINSDE_WORKERS", "2")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let s = summary(&out_dir);
    assert_eq!(s["config"]["seed"], "5");
    assert_eq!(s["config"]["chain_order"], "2");
    let trace = fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert!(trace.starts_with("path,seed,t,x,y\n"));
    assert_eq!(trace.lines().count(), 1 + 3 * 65);
}

#[test]
fn path_dumps_load_back() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::from_text("m = 2\nlevel = 5\ndump_paths = true\nseed = 8\n").unwrap();
    cfg.command = Command::Simulate;
    run(&cfg, &opts(dir.path(), 1)).unwrap();
    let p = chainsde::BrownianPath::load(dir.path().join("paths/path_000001.bpath")).unwrap();
    assert_eq!(p.level(), 5);
    assert_eq!(p.seed(), chainsde::ensemble::path_seed(8, 1));
}
