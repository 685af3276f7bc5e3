use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_groundparallax"))
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, value: serde_json::Value) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string(&value).unwrap()).unwrap();
    p
}

#[test]
fn synth_train_detect_eval_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let params = write(
        d,
        "params.json",
        serde_json::json!({"width": 160, "height": 96, "focal_px": 100.0, "n_frames": 8}),
    );
    let cfg = write(
        d,
        "cfg.json",
        serde_json::json!({
            "distance_threshold_m": 0.12,
            "forest": {"n_trees": 4},
            "proposals": {"scales": [16, 32, 64], "stride": 8}
        }),
    );
    let (seq_a, seq_b) = (d.join("a"), d.join("b"));
    for (seed, dir) in [("3", &seq_a), ("4", &seq_b)] {
        let o = run(&["synth", "--random", seed, "--scene-params", s(&params), "--out", s(dir)]);
        assert!(o.status.success());
        assert!(dir.join("scene.json").is_file());
        assert!(dir.join("poses.csv").is_file());
    }

    let models = d.join("models");
    let c = s(&cfg);
    assert!(run(&["--config", c, "train", "--sequence", s(&seq_a), "--out", s(&models)]).status.success());
    for f in ["agr.json", "ar.json", "features.csv"] {
        assert!(models.join(f).is_file(), "{f}");
    }

    let pred = d.join("pred");
    let o = run(&[
        "--config", c, "detect", "--sequence", s(&seq_b), "--models", s(&models), "--out", s(&pred),
        "--threshold", "0.5", "--dump-intermediates",
    ]);
    assert!(o.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(pred.join("detect.json")).unwrap()).unwrap();
    let processed = report["processed"].as_array().unwrap();
    assert!(!processed.is_empty());
    assert!(!report["skipped"].as_array().unwrap().is_empty());
    let id = processed[0].as_u64().unwrap();
    let name = format!("{id:06}");
    for sub in ["edges", "maps"] {
        assert!(pred.join("intermediates").join(sub).join(format!("{name}.png")).is_file(), "{sub}");
    }
    assert!(pred.join("intermediates/proposals").join(format!("{name}.json")).is_file());
    assert!(pred.join("intermediates/parallax").join(format!("{name}.csv")).is_file());
    assert!(pred.join("maps").join(format!("{name}.png")).is_file());
    assert!(pred.join("maps").join(format!("{name}.json")).is_file());
    assert!(pred.join("masks").join(format!("{name}.png")).is_file());

    let eval = d.join("eval.json");
    let o = run(&[
        "--config", c, "eval", "--sequence", s(&seq_b), "--predictions", s(&pred), "--out", s(&eval),
    ]);
    assert!(o.status.success());
    let e: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&eval).unwrap()).unwrap();
    for key in ["itpr", "mifp", "tpr", "fpr", "threshold", "config_hash"] {
        assert!(!e[key].is_null(), "{key}");
    }
    assert_eq!(e["n_frames"].as_u64().unwrap() as usize, processed.len());

    let roc = d.join("roc.csv");
    let o = run(&[
        "--config", c, "roc", "--sequence", s(&seq_b), "--predictions", s(&pred), "--out", s(&roc),
    ]);
    assert!(o.status.success());
    assert!(std::fs::read_to_string(&roc).unwrap().lines().count() > 100);
}

#[test]
fn bad_arguments_exit_with_one() {
    assert_eq!(run(&["detect", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn invalid_config_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "cfg.json", serde_json::json!({"tau_e": 1.5}));
    let o = run(&["--config", s(&cfg), "synth", "--random", "1", "--out", s(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(1));
    let unknown = write(tmp.path(), "u.json", serde_json::json!({"no_such_key": 1}));
    let o = run(&["--config", s(&unknown), "synth", "--random", "1", "--out", s(&tmp.path().join("y"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_input_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&[
        "detect", "--sequence", s(&tmp.path().join("none")), "--models", s(tmp.path()), "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = run(&["synth", "--random", "1", "--out", s(&blocker.join("seq"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn calibrate_recovers_world_floor() {
    use groundparallax::geometry::{ground_homography, PixelPoint};
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let seq = d.join("seq");
    let params = write(d, "params.json", serde_json::json!({"width": 160, "height": 96, "focal_px": 100.0, "n_frames": 8}));
    assert!(run(&["synth", "--random", "5", "--scene-params", s(&params), "--out", s(&seq)]).status.success());
    let spec: groundparallax::synth::SceneSpec =
        serde_json::from_str(&std::fs::read_to_string(seq.join("scene.json")).unwrap()).unwrap();
    let h = ground_homography(&spec.pose(6).unwrap(), &spec.pose(0).unwrap(), &spec.ground(), &spec.intrinsics)
        .unwrap();
    let pairs: Vec<serde_json::Value> = [(20.0, 80.0), (140.0, 85.0), (80.0, 60.0), (40.0, 90.0), (120.0, 65.0)]
        .iter()
        .map(|&(u, v)| {
            let p = h.transfer(PixelPoint::new(u, v)).unwrap();
            serde_json::json!({"first": [p.u, p.v], "second": [u, v]})
        })
        .collect();
    let pairs_path = write(d, "pairs.json", serde_json::Value::Array(pairs));
    let out = d.join("ground.json");
    let report = d.join("report.json");
    let o = run(&[
        "calibrate", "--pairs", s(&pairs_path), "--intrinsics", s(&seq.join("intrinsics.json")), "--height", "0.6",
        "--extrinsics", s(&seq.join("extrinsics.json")), "--out", s(&out), "--report", s(&report),
    ]);
    assert!(o.status.success());
    assert!(report.is_file());
    let g: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let n: Vec<f64> = g["normal"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(n[0].abs() < 1e-6 && n[1].abs() < 1e-6 && (n[2].abs() - 1.0).abs() < 1e-6, "{n:?}");
    assert!((g["height_m"].as_f64().unwrap() - 0.6).abs() < 1e-9);
}
