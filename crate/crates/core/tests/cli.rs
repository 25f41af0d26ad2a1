use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hennion-lab")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn cfg(rel: &str) -> String {
    configs().join(rel).to_string_lossy().into_owned()
}

#[test]
fn metric_reports_distance_and_oracles() {
    let out = run(&["--json", "metric", &cfg("matrices/diag_15_05.json"), &cfg("matrices/diag_05_15.json")]);
    assert!(out.status.success());
    let v = json(&out);
    assert!((v["d"].as_f64().unwrap() - 0.8).abs() < 1e-12);
    assert!((v["d_line"].as_f64().unwrap() - 0.8).abs() < 1e-9);
    assert_eq!(v["component_verdict"], "same_component");
}

#[test]
fn metric_of_boundary_state_is_one() {
    let out = run(&["--json", "metric", &cfg("matrices/diag_2_0.json"), &cfg("matrices/identity.json")]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["d"].as_f64().unwrap(), 1.0);
    assert_eq!(v["component_verdict"], "distance_one");
}

#[test]
fn contraction_writes_manifest_and_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_string_lossy().into_owned();
    let out = run(&["--json", "--out", &out_dir, "contraction", &cfg("maps/replacement.json")]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["verdict"], "certified_yes");
    assert_eq!(v["upper"].as_f64().unwrap(), 0.0);
    hennion_lab::cli::verify_manifest(dir.path()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_string_lossy().into_owned();
    let out = run(&["--json", "--out", &out_dir, "contraction", &cfg("maps/transpose.json")]);
    assert!(out.status.success());
    assert_eq!(json(&out)["verdict"], "certified_no");
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_string_lossy().into_owned();
    let out = run(&["--json", "--out", &out_dir, "contraction", &cfg("maps/not_faithful.json")]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(json(&out)["error"]["exit_code"], 4);

    let out = run(&["--json", "metric", &cfg("matrices/missing.json"), &cfg("matrices/identity.json")]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"algebra": {"dims": [2], "weights": [1]}, "driver": {"kind": "constant"}, "typo": 1, "master_seed": 1}"#)
        .unwrap();
    let out = run(&["--json", "--config", &bad.to_string_lossy(), "--out", &out_dir, "process"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn process_and_fcs_configs_run() {
    for (command, config) in [("process", "process_depolarizing.json"), ("fcs", "fcs_product.json")] {
        let dir = tempfile::tempdir().unwrap();
        let out_dir = dir.path().to_string_lossy().into_owned();
        let out = run(&["--json", "--config", &cfg(config), "--out", &out_dir, command]);
        assert!(out.status.success(), "{command}: {}", String::from_utf8_lossy(&out.stderr));
        let m = hennion_lab::cli::verify_manifest(dir.path()).unwrap();
        assert!(m.all_pass);
        assert_eq!(m.command, command);
    }
}

#[test]
fn seed_flag_overrides_config() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, seed) in [(&a, "5"), (&b, "6")] {
        let out_dir = dir.path().to_string_lossy().into_owned();
        let out = run(&["--config", &cfg("process_depolarizing.json"), "--seed", seed, "--out", &out_dir, "process"]);
        assert!(out.status.success());
    }
    let ma = hennion_lab::cli::verify_manifest(a.path()).unwrap();
    let mb = hennion_lab::cli::verify_manifest(b.path()).unwrap();
    assert_eq!((ma.master_seed, mb.master_seed), (5, 6));
}

#[test]
fn quick_selftest_passes() {
    let out = run(&["--json", "selftest", "quick"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}
