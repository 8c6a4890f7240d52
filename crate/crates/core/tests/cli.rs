use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn monocanon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_monocanon"))
        .args(args)
        .env("MONOCANON_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = r#"{
  "data": {"train_size": 24, "test_size": 16},
  "eval": {"n_warps": 2, "equ_images": 4, "inv_groups": 4, "inv_variants": 2}
}"#;

#[test]
fn config_errors_list_every_unknown_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"sede": 1, "dec": {"gird": 4}}"#);
    let out = monocanon(&["check-group", "--config", &cfg, "--set", "train.epochz=3", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for key in ["sede", "dec.gird", "train.epochz"] {
        assert!(err.contains(key), "{key} missing from: {err}");
    }
}

#[test]
fn gen_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let read = |sub: &str| {
        let d = dir.path().join(sub);
        let mut files: Vec<_> = std::fs::read_dir(&d)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.file_name().unwrap() != "run.log")
            .collect();
        files.sort();
        files.iter().map(|p| std::fs::read(p).unwrap()).collect::<Vec<_>>()
    };
    for (sub, seed) in [("a", "3"), ("b", "3"), ("c", "4")] {
        let out_dir = dir.path().join(sub);
        let out = monocanon(&[
            "gen",
            "--config",
            &cfg,
            "--seed",
            seed,
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn untrained_dec_evaluates_like_the_bare_network() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let data = dir.path().join("data");
    let out = monocanon(&["gen", "--config", &cfg, "--out", data.to_str().unwrap()]);
    assert!(out.status.success());
    let set_data = format!("paths.data={}", data.to_str().unwrap());
    let metrics = |kind: &str| -> Value {
        let o = dir.path().join(kind);
        let out = monocanon(&[
            "eval",
            "--config",
            &cfg,
            "--set",
            &set_data,
            "--set",
            &format!("model.kind={kind}"),
            "--out",
            o.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let mut v: Value = serde_json::from_str(&std::fs::read_to_string(o.join("metrics.json")).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("canonicalizer");
        v
    };
    assert_eq!(metrics("augmented"), metrics("dec"));
}

#[test]
fn check_group_reports_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = monocanon(&[
        "check-group",
        "--set",
        "check_group.triples=50",
        "--set",
        "check_group.jacobian_points=500",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("check_group.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], Value::Bool(true));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
}

#[test]
fn demo_warp_writes_an_image() {
    let dir = tempfile::tempdir().unwrap();
    let out = monocanon(&[
        "demo-warp",
        "--set",
        "demo.images=2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let img = monocanon::FeatureMap::read_pnm(&dir.path().join("demo_warp.pgm")).unwrap();
    assert!(img.height() > 0 && img.width() > 0);
}

#[test]
fn missing_inputs_are_reported_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let out = monocanon(&[
        "train",
        "--set",
        "model.kind=dec",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("paths.data") && err.contains("paths.augmented"), "{err}");
}
