use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dsgd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsgd"))
        .args(args)
        .env_remove("DSGD_OUT_DIR")
        .env_remove("DSGD_JOBS")
        .output()
        .expect("spawn dsgd")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stderr)))
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn lists_builtin_scenarios() {
    let o = dsgd(&["list"]);
    assert!(o.status.success());
    let names = stdout_json(&o);
    assert!(names.as_array().unwrap().iter().any(|n| n == "example1"));
}

#[test]
fn run_writes_artifacts_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for k in 0..2 {
        let out = tmp.path().join(format!("r{k}"));
        let o = dsgd(&[
            "run",
            "-s",
            "example1",
            "--horizon",
            "150",
            "--seeds",
            "2",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let v = stdout_json(&o);
        assert_eq!(v["agents"].as_array().unwrap().len(), 5);
        for f in ["metrics.csv", "ledger.csv", "summary.csv", "manifest.txt", "plots/distance.svg", "plots/payments.svg"] {
            assert!(out.join(f).is_file(), "{f}");
        }
        let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
        assert!(manifest.contains("config_sha256="));
        assert!(manifest.contains("horizon=150"));
        bytes.push((fs::read(out.join("metrics.csv")).unwrap(), fs::read(out.join("ledger.csv")).unwrap()));
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn out_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_dsgd"))
        .args(["--jobs", "2", "run", "-s", "example2", "--horizon", "50"])
        .env("DSGD_OUT_DIR", tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("ledger.csv").is_file());
}

#[test]
fn invalid_scenario_reports_violations() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write(
        tmp.path(),
        "bad.toml",
        r#"
name = "bad"
horizon = 100
[topology]
kind = "ring"
n = 2
weight = 0.7
[problem]
kind = "mean_estimation"
dim = 2
[schedule]
lambda0 = 0.1
v = 0.4
r = 0.5
delta = 1e-4
"#,
    );
    let out = tmp.path().join("o");
    let runs = [
        vec!["validate", "-s", &path],
        vec!["run", "-s", &path, "--out", out.to_str().unwrap()],
    ];
    for args in &runs {
        let o = dsgd(args);
        assert_eq!(o.status.code(), Some(2));
        let e = stderr_json(&o);
        assert_eq!(e["error"], "invalid_config");
        let names: Vec<&str> = e["violations"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v["constraint"].as_str().unwrap())
            .collect();
        assert_eq!(names, ["topology.size", "schedule.stepsize_decay"]);
    }
    assert!(!out.exists());
}

#[test]
fn unknown_scenario_and_bad_toml() {
    let o = dsgd(&["run", "-s", "no_such_scenario"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "invalid_config");

    let tmp = tempfile::tempdir().unwrap();
    let path = write(tmp.path(), "x.toml", "name = 3\n");
    let o = dsgd(&["validate", "-s", &path]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergence_exits_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write(
        tmp.path(),
        "div.toml",
        r#"
name = "div"
horizon = 200
n_seeds = 1
[topology]
kind = "ring"
n = 5
weight = 0.3
[problem]
kind = "mean_estimation"
dim = 2
[schedule]
lambda0 = 50.0
v = 0.55
r = 0.51
delta = 1e-4
"#,
    );
    let o = dsgd(&["run", "-s", &path, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_json(&o)["error"], "divergence");
}

#[test]
fn example2_check_reports_ratio() {
    let o = dsgd(&["check-example2", "--a", "3", "--seeds", "2"]);
    assert!(o.status.success());
    let v = stdout_json(&o);
    let limit = v["mse_ratio_limit"].as_f64().unwrap();
    assert!((limit - (5.0f64 / 7.0).powi(2)).abs() < 1e-15);
    let ratio = v["mse_ratio"].as_f64().unwrap();
    assert!((ratio - limit).abs() / limit < 0.1, "{ratio}");
}

#[test]
fn ic_gap_and_sweep() {
    let o = dsgd(&["ic-gap", "-s", "example1", "--horizon", "200", "--seeds", "2", "--a", "1", "--payments", "constant:10"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["mean_gain"].as_f64().unwrap(), 0.0);

    let tmp = tempfile::tempdir().unwrap();
    let o = dsgd(&[
        "sweep",
        "-s",
        "utility_sweep",
        "--horizon",
        "100",
        "--seeds",
        "2",
        "--a-grid",
        "1,3",
        "--payments",
        "off,constant:100",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["argmax"].as_array().unwrap().len(), 2);
    assert!(tmp.path().join("sweep.csv").is_file());

    let o = dsgd(&["sweep", "-s", "utility_sweep", "--payments", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
}
