//! The `vitreg` binary end to end on a tiny synthetic dataset.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn vitreg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vitreg"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = vitreg(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_config(dir: &Path) {
    let cfg = json!({
        "train_manifest": "data/train.csv",
        "val_manifest": "data/test.csv",
        "out_dir": "run",
        "model": {
            "image_height": 32, "image_width": 32, "channels": 3, "patch_size": 8,
            "depth": 1, "embed_dim": 16, "num_heads": 2, "mlp_hidden": 32, "fc1_width": 16
        },
        "preprocess": { "target_height": 32, "target_width": 32 },
        "train": { "epochs": 2, "batch_size": 8 }
    });
    fs::write(dir.join("cfg.json"), cfg.to_string()).unwrap();
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--n", "20", "--size", "32", "--seed", "13", "--out", "data"]);
    for f in ["manifest.csv", "train.csv", "test.csv", "run.json"] {
        assert!(d.join("data").join(f).is_file(), "{f}");
    }
    assert_eq!(fs::read_dir(d.join("data/images")).unwrap().count(), 20);
    assert_eq!(fs::read_to_string(d.join("data/test.csv")).unwrap().lines().count(), 5);

    run_config(d);
    ok(d, &["train", "--config", "cfg.json", "--set", "train.epochs=1"]);
    let trace = fs::read_to_string(d.join("run/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 2);
    let run: Value = serde_json::from_str(&fs::read_to_string(d.join("run/run.json")).unwrap()).unwrap();
    assert_eq!(run["config"]["train"]["epochs"], 1);

    ok(d, &["eval", "--checkpoint", "run/best.ckpt", "--manifest", "data/test.csv", "--out", "ev", "--plots"]);
    let report: Value = serde_json::from_str(&fs::read_to_string(d.join("ev/report.json")).unwrap()).unwrap();
    assert!(report["mae"].is_number());
    assert!(report.get("pearson").is_some());
    assert_eq!(report["n"], 4);
    for f in ["predictions.csv", "cmc.csv", "histogram.csv", "cmc.svg", "histogram.svg", "scatter.svg", "run.json"] {
        assert!(d.join("ev").join(f).is_file(), "{f}");
    }

    let img = fs::read_dir(d.join("data/images")).unwrap().next().unwrap().unwrap().path();
    let img = img.to_str().unwrap();
    ok(d, &["attnmap", "--checkpoint", "run/final.ckpt", "--image", img, "--layer", "last", "--out", "am"]);
    ok(d, &["attnmap", "--checkpoint", "run/final.ckpt", "--image", img, "--layer", "0", "--aggregation", "head:1", "--out", "am2"]);
    for f in ["heatmap.png", "overlay.png", "attention.csv", "run.json"] {
        assert!(d.join("am").join(f).is_file(), "{f}");
    }
    let csv = fs::read_to_string(d.join("am/attention.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    ok(d, &["report", "--report", "ev/report.json", "--out", "rep"]);
    assert!(fs::read_to_string(d.join("rep/summary.txt")).unwrap().contains("mae"));

    ok(d, &["augment", "--manifest", "data/train.csv", "--out", "aug", "--seed", "2", "--hflip", "--cutmix", "3", "--mixup", "2"]);
    let rows = fs::read_to_string(d.join("aug/manifest.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows, 16 * 3 * 2 + 5);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(vitreg(d, &["nonsense"]).status.code(), Some(1));
    assert_eq!(vitreg(d, &["synth", "--n", "0", "--out", "x"]).status.code(), Some(1));
    assert_eq!(vitreg(d, &["synth", "--n", "4", "--size", "16", "--out", "x", "--test-fraction", "1.5"]).status.code(), Some(1));

    ok(d, &["synth", "--n", "8", "--size", "32", "--seed", "1", "--out", "data"]);
    run_config(d);
    let out = vitreg(d, &["train", "--config", "cfg.json", "--set", "train.epochz=1"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: config:"), "{err}");

    let out = vitreg(d, &["train", "--config", "cfg.json", "--set", "train.learning_rate=1e30"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("training: non-finite loss"));

    fs::write(d.join("bad.ckpt"), b"not a checkpoint").unwrap();
    let out = vitreg(d, &["eval", "--checkpoint", "bad.ckpt", "--manifest", "data/test.csv", "--out", "ev"]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(d.join("bad.csv"), "image_path,score_total\nx.png,1\n").unwrap();
    ok(d, &["train", "--config", "cfg.json", "--set", "train.epochs=1"]);
    let out = vitreg(d, &["eval", "--checkpoint", "run/final.ckpt", "--manifest", "bad.csv", "--out", "ev"]);
    assert_eq!(out.status.code(), Some(1));
}
