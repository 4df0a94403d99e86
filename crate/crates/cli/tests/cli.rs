use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn uq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uq"))
        .args(args)
        .env("UQ_LOG", "error")
        .output()
        .expect("uq runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn listed_paths(m: &Value) -> Vec<String> {
    m["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap().to_string()).collect()
}

const GP_ONLY: &str = r#"{
  "suite": "regress",
  "seeds": [0],
  "data": { "n_train": 30, "n_test_in_domain": 50, "n_test_extrapolation": 50 },
  "methods": [
    { "method": "gp", "grid": { "lengthscales": [0.5, 1.0], "signal_vars": [1.0], "noise_vars": [0.1] } }
  ]
}"#;

#[test]
fn gp_only_regression_lists_its_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "gp.json", GP_ONLY);
    let out_dir = tmp.path().join("run");
    let out = uq(&["regress", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let m = manifest(&out_dir);
    let paths = listed_paths(&m);
    for suffix in ["coverage.csv", "pulls.csv", "bands.svg"] {
        assert!(paths.iter().any(|p| p.ends_with(suffix)), "no {suffix} in {paths:?}");
    }
    for p in &paths {
        assert!(out_dir.join(p).is_file(), "{p} listed but missing");
    }
    assert!(m["failures"].as_array().unwrap().is_empty());
    assert!(out_dir.join(m["metrics"].as_str().unwrap()).is_file());

    for p in paths.iter().filter(|p| p.ends_with("coverage.csv")) {
        assert_eq!(header(&out_dir.join(p)), "level,empirical");
    }
    for p in paths.iter().filter(|p| p.ends_with("pulls.csv")) {
        assert_eq!(header(&out_dir.join(p)), "index,pull");
    }
}

#[test]
fn diverging_method_exits_3_and_keeps_the_rest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "diverge.json",
        r#"{
          "suite": "regress",
          "seeds": [0],
          "data": { "n_train": 30, "n_test_in_domain": 50, "n_test_extrapolation": 50 },
          "methods": [
            { "method": "gp", "grid": { "lengthscales": [1.0], "signal_vars": [1.0], "noise_vars": [0.1] } },
            { "method": "cp_mlp", "net": { "hidden": [4] }, "train": { "epochs": 50, "lr": 1e300 } }
          ]
        }"#,
    );
    let out_dir = tmp.path().join("run");
    let out = uq(&["regress", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 3);

    let m = manifest(&out_dir);
    let failures = m["failures"].as_array().unwrap();
    assert_eq!(failures.len(), 1);
    assert_eq!(failures[0]["method"], "cp_mlp");
    assert!(listed_paths(&m).iter().any(|p| p.starts_with("gp/")));
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run");
    let out_dir = out_dir.to_str().unwrap();

    let out = uq(&["classify", "--out", out_dir]);
    assert_eq!(code(&out), 2);

    let typo = write_config(tmp.path(), "typo.json", r#"{ "suite": "bvm", "pp": 0.3 }"#);
    assert_eq!(code(&uq(&["bvm", "--config", typo.to_str().unwrap(), "--out", out_dir])), 2);

    let gp = write_config(tmp.path(), "gp.json", GP_ONLY);
    assert_eq!(code(&uq(&["classify", "--config", gp.to_str().unwrap(), "--out", out_dir])), 2);

    let no_methods = write_config(tmp.path(), "empty.json", r#"{ "suite": "regress", "seeds": [0], "methods": [] }"#);
    assert_eq!(code(&uq(&["regress", "--config", no_methods.to_str().unwrap(), "--out", out_dir])), 2);

    assert_eq!(code(&uq(&["bvm", "--p", "1.5", "--out", out_dir])), 2);

    let missing = tmp.path().join("nope.json");
    assert_eq!(code(&uq(&["bvm", "--config", missing.to_str().unwrap(), "--out", out_dir])), 2);
    assert!(!Path::new(out_dir).join("metrics.json").exists());
}

#[test]
fn io_errors_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let under_file = blocker.join("run");
    assert_eq!(code(&uq(&["closure", "--out", under_file.to_str().unwrap()])), 4);
}

#[test]
fn bvm_and_closure_write_their_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let bvm = tmp.path().join("bvm");
    let out = uq(&["bvm", "--ns", "10,100", "--out", bvm.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(bvm.join("tv.csv").is_file());
    assert!(bvm.join("tv.svg").is_file());

    let closure = tmp.path().join("closure");
    assert_eq!(code(&uq(&["closure", "--sigma-scale", "2", "--out", closure.to_str().unwrap()])), 0);
    let m = manifest(&closure);
    let paths = listed_paths(&m);
    let table = paths.iter().find(|p| p.ends_with("closure.csv")).expect("closure table");
    assert_eq!(header(&closure.join(table)), "k,B_k");
    let pulls = paths.iter().find(|p| p.ends_with("pulls.csv")).expect("pull table");
    assert_eq!(header(&closure.join(pulls)), "index,pull");
}

#[test]
fn small_classification_run_writes_reliability_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "classify.json",
        r#"{
          "suite": "classify",
          "seeds": [0],
          "data": { "n": 60, "noise": 0.2 },
          "n_test": 200,
          "grid_resolution": 10,
          "methods": [
            { "method": "deterministic", "net": { "hidden": [8] }, "train": { "epochs": 30 } },
            { "method": "de", "net": { "hidden": [8] }, "ensemble": { "members": 3, "epochs": 30 } }
          ]
        }"#,
    );
    let out_dir = tmp.path().join("run");
    let out = uq(&["classify", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let paths = listed_paths(&manifest(&out_dir));
    let tables: Vec<_> = paths.iter().filter(|p| p.ends_with("reliability.csv")).collect();
    assert_eq!(tables.len(), 2);
    for t in tables {
        assert_eq!(header(&out_dir.join(t)), "bin,count,acc,conf");
    }
}

#[test]
fn same_seed_gives_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "gp.json", GP_ONLY);
    let run = |name: &str, seed: &str| {
        let dir = tmp.path().join(name);
        let out = uq(&["regress", "--config", cfg.to_str().unwrap(), "--seed", seed, "--out", dir.to_str().unwrap()]);
        assert_eq!(code(&out), 0);
        fs::read(dir.join("metrics.json")).unwrap()
    };
    assert_eq!(run("a", "7"), run("b", "7"));
    assert_ne!(run("a", "7"), run("c", "8"));
}

#[test]
fn dataset_dump_writes_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "gp.json", GP_ONLY);
    let out_dir = tmp.path().join("data");
    let out = uq(&["datasets", "dump", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let listed = String::from_utf8(out.stdout).unwrap();
    let first = listed.lines().next().expect("at least one file");
    let csv = fs::read_to_string(first).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x,y,split"));
    assert_eq!(lines.count(), 30 + 50 + 50);
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        uqkit::harness::ExperimentConfig::load(&path)
            .and_then(|c| c.validate())
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}
