use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static Path {
    Path::new(env!("CARGO_BIN_EXE_egopose"))
}

fn tiny_config(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "corpus": {"synthetic": {"subjects": 2, "per_subject": 2, "duration_s": 6.0, "fps": 30.0}, "train_ratio": 0.75},
        "train": {"hidden": 16, "mlp": [16], "window": 9, "epochs": 1, "batch_schedule": [64]},
        "seed": 3,
        "out": dir.join("out"),
    });
    let path = dir.join("cfg.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn run(cfg: &Path, args: &[&str]) -> Output {
    Command::new(bin()).arg("--config").arg(cfg).args(args).env("UNOC_THREADS", "2").output().unwrap()
}

fn ok(cfg: &Path, args: &[&str]) -> String {
    let out = run(cfg, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(out.stderr.trim_ascii()).unwrap_or_else(|_| panic!("stderr is not JSON: {}", String::from_utf8_lossy(&out.stderr)))
}

#[test]
fn full_pipeline_and_error_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("out");
    for c in ["synth", "ingest", "simulate", "stats", "train", "eval"] {
        ok(&cfg, &[c]);
        assert!(out.join(format!("manifests/{c}.json")).is_file(), "{c} manifest");
    }

    let stats = std::fs::read_to_string(out.join("stats/stats.csv")).unwrap();
    assert!(stats.starts_with("part,ratio,avg_duration_s\nhead,0.000000,"), "{stats}");
    assert!(stats.contains("\nself_contact,") && stats.contains("\nhand_body_contact,"));

    let csv = std::fs::read_to_string(out.join("eval/report.csv")).unwrap();
    assert!(csv.starts_with("model,subset,condition,rmsjpe_cm,mpjpe_cm,count\n"));
    for model in ["baseline", "network", "network+post"] {
        assert!(csv.contains(&format!("\n{model},all,occluded,")), "{model}");
    }

    let bvh = std::fs::read_dir(out.join("bvh")).unwrap().flat_map(|d| std::fs::read_dir(d.unwrap().path()).unwrap()).next().unwrap().unwrap().path();
    let bvh = bvh.to_str().unwrap();
    let predicted = ok(&cfg, &["predict", "--input", bvh]);
    let mut lines = predicted.lines();
    assert_eq!(lines.next(), Some("frame,joint,x,y,z"));
    assert!(lines.next().unwrap().split(',').count() == 5);

    ok(&cfg, &["export", "--input", bvh]);
    let exported = std::fs::read_dir(out.join("export")).unwrap().next().unwrap().unwrap().path();
    assert!(std::fs::read_to_string(exported).unwrap().starts_with("HIERARCHY"));

    let strict = run(&cfg, &["eval", "--threshold-cm", "0.001"]);
    assert_eq!(strict.status.code(), Some(6));
    assert_eq!(error_json(&strict)["error"], "threshold");

    let wrong_task = run(&cfg, &["eval", "--task", "three-point"]);
    assert_eq!(wrong_task.status.code(), Some(5));
    assert_eq!(error_json(&wrong_task)["error"], "layout_hash_mismatch");
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"camera": {"fovv": 90}}"#).unwrap();
    let out = run(&cfg, &["synth"]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["error"], "unknown_key");
    assert!(err["message"].as_str().unwrap().contains("camera.fovv"));
}

#[test]
fn invalid_values_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"camera": {"fov": -5}}"#).unwrap();
    let out = run(&cfg, &["synth"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["message"].as_str().unwrap().contains("camera.fov"));
}

#[test]
fn missing_corpus_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, serde_json::json!({"out": tmp.path().join("out")}).to_string()).unwrap();
    let out = run(&cfg, &["simulate"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
