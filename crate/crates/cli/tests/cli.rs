//! Exit codes, configuration layering and output files of the binary.

use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ising-factor"));
    c.args(args);
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("ISING_FACTOR_")) {
        c.env_remove(k);
    }
    c
}

fn run(args: &[&str]) -> Output {
    cli(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn validate_default_passes_and_lists_suites() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--out", dir.path().to_str().unwrap(), "validate"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = json(&dir.path().join("validate.json"));
    let checks: usize =
        report["reports"].as_array().unwrap().iter().map(|r| r["checks"].as_array().unwrap().len()).sum();
    assert!(checks >= 6);
    assert_eq!(report["passed"], true);
    let manifest = json(&dir.path().join("validate.manifest.json"));
    assert_eq!(manifest["outputs"][1]["csv_header"], "suite,check,value,reference,tolerance,passed");
}

#[test]
fn parameter_errors_exit_2_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for (args, field) in [
        (vec!["--d", "1", "validate"], "`d`"),
        (vec!["--tanh-beta", "1.0", "validate"], "tanh_beta"),
        (vec!["--beta", "0.3", "--tanh-beta", "0.2", "validate"], "beta"),
        (vec!["--gamma", "5", "experiment", "reference-match"], "`gamma`"),
        (vec!["--dt", "0", "trajectory"], "`dt`"),
        (vec!["--replicas", "0", "experiment", "glauber"], "`replicas`"),
        (vec!["experiment", "no-such-experiment"], "`experiment`"),
    ] {
        let mut full = vec!["--out", out];
        full.extend(args.iter().copied());
        let o = run(&full);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(stderr(&o).contains(field), "{args:?}: {}", stderr(&o));
    }
    let o = run(&["--out", out, "experiment"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["--bogus-flag", "validate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_dir_is_created_and_unwritable_dir_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let nested = dir.path().join("a/b/c");
    let o = run(&["--out", nested.to_str().unwrap(), "--depth", "1", "sample"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(nested.join("sample.csv").exists());

    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = run(&["--out", blocker.join("sub").to_str().unwrap(), "validate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`out`"));
}

#[test]
fn small_depth_decay_run_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--out", dir.path().to_str().unwrap(), "--replicas", "10", "experiment", "depth-decay"]);
    assert!(matches!(o.status.code(), Some(0) | Some(3)), "{}", stderr(&o));
    let report = json(&dir.path().join("depth-decay.json"));
    assert_eq!(report["report"]["kind"], "decay");
    assert_eq!(report["report"]["estimates"].as_array().unwrap().len(), 4);
    let depth_csv = std::fs::read_to_string(dir.path().join("depth-decay.depth.csv")).unwrap();
    assert!(depth_csv.starts_with("depth,mean,se\n"));
}

#[test]
fn failing_check_exits_3_and_keeps_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.json");
    std::fs::write(&config, r#"{"experiment": "depth-decay", "replicas": 40, "depth": 3, "ratio_point_max": 0.0}"#)
        .unwrap();
    let o = run(&["--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "experiment"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("ratio_point"));
    assert!(dir.path().join("depth-decay.manifest.json").exists());
}

#[test]
fn config_file_env_and_flags_layer_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.json");
    std::fs::write(&config, r#"{"d": 2, "depth": 1, "seed": 3, "tanh_beta": 0.5}"#).unwrap();
    let out = dir.path().to_str().unwrap();
    let o = cli(&["--config", config.to_str().unwrap(), "--out", out, "--depth", "2", "sample"])
        .env("ISING_FACTOR_SEED", "11")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest = json(&dir.path().join("sample.manifest.json"));
    let params = &manifest["config"]["config"]["params"];
    assert_eq!(params["d"], 2);
    assert_eq!(params["depth"], 2);
    assert_eq!(params["seed"], 11);
    assert_eq!(params["tanh_beta"], 0.5);
    // Path of radius 2 (d = 2) plus the header line.
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 6);

    std::fs::write(&config, r#"{"degree": 2}"#).unwrap();
    let o = run(&["--config", config.to_str().unwrap(), "--out", out, "sample"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn manifest_checksums_match_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--out", dir.path().to_str().unwrap(), "--dt", "0.05", "trajectory"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest = json(&dir.path().join("trajectory.manifest.json"));
    for entry in manifest["outputs"].as_array().unwrap() {
        let bytes = std::fs::read(dir.path().join(entry["file"].as_str().unwrap())).unwrap();
        assert_eq!(entry["sha256"], ising_factor_cli::manifest::hex_sha256(&bytes));
        assert_eq!(entry["bytes"], bytes.len());
    }
    assert_eq!(manifest["outputs"][0]["csv_header"], "time,vertex_label,value");
    assert!(manifest["duration_seconds"].as_f64().unwrap() >= 0.0);
}
