use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn svqgc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svqgc"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn svqgc")
}

fn manifest(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const FIT: &str = r#"{"schema_version": 1, "model": {"n_trees": 5, "n_burn": 20, "n_save": 20, "n_chains": 2, "seed": 3}}"#;

fn write_fixture(dir: &Path) {
    let data = dir.join("data");
    fs::create_dir_all(&data).unwrap();
    let (mut y, mut x, mut region) = ("y\n".to_string(), "x1\n".to_string(), "region\n".to_string());
    for i in 0..40 {
        let r = i % 2;
        let level = i % 4;
        let slope = if r == 0 { 0.5 } else { -0.5 };
        let v = 1.0 + slope * level as f64 + 0.1 * ((i * 7 % 11) as f64 - 5.0);
        y.push_str(&format!("{v}\n"));
        x.push_str(&format!("{level}\n"));
        region.push_str(&format!("{r}\n"));
    }
    fs::write(data.join("y.csv"), y).unwrap();
    fs::write(data.join("exposures.csv"), x).unwrap();
    fs::write(data.join("region.csv"), region).unwrap();
    fs::write(dir.join("graph.csv"), "i,j\n0,1\n").unwrap();
    fs::write(dir.join("fit.json"), FIT).unwrap();
}

#[test]
fn make_grid_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let out = svqgc(dir.path(), &["make-grid", "--rows", "2", "--cols", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1 + 4, "{text}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("4 regions, 4 edges"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(svqgc(dir.path(), &["make-grid", "--bogus"]).status.code(), Some(2));
    assert_eq!(svqgc(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(svqgc(dir.path(), &["fit", "--model", "nope"]).status.code(), Some(2));
}

#[test]
fn missing_input_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = svqgc(dir.path(), &["quantize", "--input", "absent.csv", "--q", "4", "--output", "q.csv", "--edges", "e.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn fit_writes_draws_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let out = svqgc(
        dir.path(),
        &["fit", "--model", "vcbart", "--data", "data", "--graph", "graph.csv", "--config", "fit.json", "--out", "draws"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&dir.path().join("draws/manifest.json"));
    assert_eq!(m["status"], "ok");
    assert_eq!(m["subcommand"], "fit");
    assert_eq!(m["seed"], 3);
    assert_eq!(m["config"]["schema_version"], 1);
    assert!(m["inputs"].as_array().unwrap().len() >= 3);
    assert!(!m["outputs"].as_array().unwrap().is_empty());

    let out = svqgc(dir.path(), &["summarize", "--draws", "draws", "--out", "summary.csv"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.starts_with("region,psi_mean,psi_lo,psi_hi,sign_flag"));
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn bad_config_records_failed_manifest() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("sim.json"), r#"{"schema_version": 1, "rows": 2, "colz": 2}"#).unwrap();
    let out = svqgc(dir.path(), &["simulate", "--config", "sim.json", "--out", "sim"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("colz"), "{err}");
    let m = manifest(&dir.path().join("sim/manifest.json"));
    assert_eq!(m["status"], "failed");
    assert!(m["error"].as_str().unwrap().contains("colz"));

    fs::write(dir.path().join("old.json"), r#"{"schema_version": 2}"#).unwrap();
    let out = svqgc(dir.path(), &["simulate", "--config", "old.json", "--out", "sim2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn experiment_resumes_from_replicates() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("exp.json"),
        r#"{"schema_version": 1, "rows": 2, "cols": 2, "n_per_cell": [5], "replicates": 2, "seed": 4,
            "fit": {"n_trees": 3, "n_burn": 10, "n_save": 10, "n_chains": 1}}"#,
    )
    .unwrap();
    let args = ["experiment", "--config", "exp.json", "--out", "exp"];
    assert_eq!(svqgc(dir.path(), &args).status.code(), Some(0));
    let first = fs::read(dir.path().join("exp/results.csv")).unwrap();

    // a removed replicate is refit, the rest reused; results are unchanged
    let rep = dir.path().join("exp/replicates/n5_rho0_sigma1/vcbart/rep0001.json");
    assert!(rep.exists());
    fs::remove_file(&rep).unwrap();
    assert_eq!(svqgc(dir.path(), &args).status.code(), Some(0));
    assert!(rep.exists());
    assert_eq!(fs::read(dir.path().join("exp/results.csv")).unwrap(), first);
}
