//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use vitreg::augmentation::{expand_dataset, mix_scores, score_cutmix, CutMixParams};
use vitreg::data::{
    preprocess, preprocess_all, render_layout, synth_dataset, synth_layout, Blob, CxrSample,
    PreprocessConfig, ScoreKind, Side,
};
use vitreg::evaluation::{evaluate, mae, pearson, EvalConfig, EvalReport};
use vitreg::image::Image;
use vitreg::model::{
    extract_attention, forward, load_weights, save_checkpoint, stack_images, Aggregation,
    HeadActivation, VitConfig, VitWeights,
};
use vitreg::training::{train, TrainConfig};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// 1. Gradient check.
fn gradient_check() -> Outcome {
    let start = Instant::now();
    let errs = common::gradient_errors(&common::grad_config(HeadActivation::Gelu), 1, 3);
    let worst = errs
        .iter()
        .max_by(|a, b| a.relative.total_cmp(&b.relative))
        .unwrap();
    let secs = start.elapsed().as_secs_f64();
    ensure(worst.relative <= 1e-3, format!("{} relative error {:.2e}", worst.name, worst.relative))?;
    ensure(secs < 30.0, format!("took {secs:.1}s"))?;
    Ok(format!(
        "{} tensors, worst relative error {:.2e} ({}), {secs:.2}s",
        errs.len(),
        worst.relative,
        worst.name
    ))
}

// 2. CutMix label oracle.
fn cutmix_oracle() -> Outcome {
    let (h, w) = (64, 64);
    let params = CutMixParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..1000 {
        let ya = rng.gen_range(0.0..8.0);
        let yb = rng.gen_range(0.0..8.0);
        let a = CxrSample::total_only(Image::filled(h, w, 1, 0.0), ya, ScoreKind::Ge, "a");
        let b = CxrSample::total_only(Image::filled(h, w, 1, 1.0), yb, ScoreKind::Ge, "b");
        let m = score_cutmix(&a, &b, &params, &mut rng).map_err(|e| e.to_string())?;
        let retained = m.sample.image.data().iter().filter(|&&v| v == 0.0).count();
        let lambda = retained as f64 / (h * w) as f64;
        ensure(m.lambda == lambda, format!("draw {i}: lambda {} vs pixel count {lambda}", m.lambda))?;
        let y = m.sample.score_total;
        ensure(y == mix_scores(lambda, ya, yb), format!("draw {i}: label not formed from counted lambda"))?;
        ensure(ya.min(yb) <= y && y <= ya.max(yb), format!("draw {i}: {y} outside [{ya}, {yb}]"))?;
    }
    Ok("1000 draws, pixel-count lambda exact, labels convex".into())
}

// 3. Replacement arithmetic.
fn replacement() -> Outcome {
    let samples: Vec<CxrSample> = (0..1878)
        .map(|i| {
            CxrSample::with_lungs(
                Image::filled(2, 2, 1, 0.5),
                (i % 5) as f64,
                (i % 3) as f64,
                ScoreKind::Ge,
                format!("{i}"),
            )
        })
        .collect();
    let out = expand_dataset(&samples, 1).map_err(|e| e.to_string())?;
    ensure(out.len() == 5634, format!("{} samples", out.len()))?;
    for s in &out {
        let (l, r) = s.lungs().ok_or("synthetic lost its lung scores")?;
        ensure(s.score_total == l + r, format!("{}: {} != {l} + {r}", s.source_id, s.score_total))?;
    }
    Ok("1878 -> 5634, every total equals its lung sum".into())
}

// 4. Metric oracles.
fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let t: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..8.0)).collect();
    let p: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..8.0)).collect();
    let dm = (mae(&p, &t).unwrap() - common::naive_mae(&p, &t)).abs();
    let dp = (pearson(&p, &t).unwrap() - common::naive_pearson(&p, &t)).abs();
    ensure(dm <= 1e-10 && dp <= 1e-10, format!("mae diff {dm:e}, pearson diff {dp:e}"))?;
    let y: Vec<f64> = t.iter().map(|x| 2.0 * x + 1.0).collect();
    let one = pearson(&y, &t).unwrap();
    ensure((one - 1.0).abs() <= 1e-12, format!("pearson(2x+1, x) = {one}"))?;
    Ok(format!("mae diff {dm:.1e}, pearson diff {dp:.1e}, pearson(2x+1, x) = {one}"))
}

struct ToyRun {
    weights: VitWeights<f32>,
    report: EvalReport,
    seconds: f64,
}

fn toy_data() -> (Vec<CxrSample>, Vec<CxrSample>, PreprocessConfig) {
    let pre = PreprocessConfig::new(64, 64);
    let all = preprocess_all(&synth_dataset(200, (64, 64), 11).unwrap(), &pre).unwrap();
    let test = all[160..].to_vec();
    let mut train = all;
    train.truncate(160);
    (train, test, pre)
}

fn toy_run(train_set: &[CxrSample], test_set: &[CxrSample], seed: u64, augment: bool) -> ToyRun {
    let start = Instant::now();
    let cfg = TrainConfig {
        seed,
        online_cutmix: augment,
        offline_replacement: augment,
        ..TrainConfig::default()
    };
    let w = VitWeights::init(&VitConfig::toy(64), seed).unwrap();
    let out = train(w, train_set, &[], &cfg).unwrap();
    let report = evaluate(&out.weights, test_set, &EvalConfig::default()).unwrap();
    ToyRun {
        weights: out.weights,
        report,
        seconds: start.elapsed().as_secs_f64(),
    }
}

// 5. Toy training quality.
fn toy_training(run: &ToyRun) -> Outcome {
    let r = &run.report;
    let pc = r.pearson.ok_or("pearson undefined")?;
    let detail = format!("test MAE {:.3}, PC {:.4}, {:.0}s", r.mae, pc, run.seconds);
    ensure(r.mae < 1.2 && pc > 0.6 && run.seconds < 600.0, detail.clone())?;
    Ok(detail)
}

// 6. Augmentation ablation direction.
fn ablation(train_set: &[CxrSample], test_set: &[CxrSample], seed0_aug: f64) -> Outcome {
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 0..3u64 {
        let with = if seed == 0 {
            seed0_aug
        } else {
            toy_run(train_set, test_set, seed, true).report.mae
        };
        let without = toy_run(train_set, test_set, seed, false).report.mae;
        wins += (with <= without) as usize;
        parts.push(format!("seed {seed}: {with:.3} vs {without:.3}"));
    }
    let detail = format!("augmented <= plain in {wins}/3 ({})", parts.join(", "));
    ensure(wins >= 2, detail.clone())?;
    Ok(detail)
}

// 7. Attention rows and localisation.
fn attention(run: &ToyRun, test_set: &[CxrSample], pre: &PreprocessConfig) -> Outcome {
    let w = &run.weights;
    let refs: Vec<&Image> = test_set.iter().map(|s| &s.image).collect();
    let cache = forward(w, &stack_images(&w.config, &refs).unwrap(), refs.len()).unwrap();
    let t = w.config.num_tokens();
    let mut worst = 0.0f64;
    for layer in 0..w.config.depth {
        for row in cache.attention(layer).chunks(t) {
            worst = worst.max((row.iter().map(|&p| p as f64).sum::<f64>() - 1.0).abs());
        }
    }
    ensure(worst <= 1e-5, format!("row sum off by {worst:e}"))?;

    let mut layout = synth_layout(64, 64, 99, 0);
    layout.blobs = vec![Blob { side: Side::Left, cx: 16.0, cy: 30.0, rx: 9.0, ry: 13.0, angle: 0.3 }];
    let (img, _, _) = render_layout(&layout).unwrap();
    let img = preprocess(&img, pre).unwrap();
    let last = w.config.depth - 1;
    let map = extract_attention(w, &img, last, Aggregation::MeanHeads).unwrap();
    let left = map.left_fraction();
    let detail = format!("max row error {worst:.1e}, left-half CLS mass {left:.3}");
    ensure(left > 0.5, detail.clone())?;
    Ok(detail)
}

fn pipeline(dir: &Path) -> Result<(), String> {
    let bin = env!("CARGO_BIN_EXE_vitreg");
    let cfg = json!({
        "train_manifest": "aug/manifest.csv",
        "val_manifest": "data/test.csv",
        "out_dir": "run",
        "model": {
            "image_height": 32, "image_width": 32, "channels": 3, "patch_size": 8,
            "depth": 2, "embed_dim": 32, "num_heads": 4, "mlp_hidden": 64, "fc1_width": 32
        },
        "preprocess": { "target_height": 32, "target_width": 32 },
        "train": { "epochs": 3, "batch_size": 16, "offline_replacement": false }
    });
    fs::write(dir.join("cfg.json"), cfg.to_string()).map_err(|e| e.to_string())?;
    let steps: [&[&str]; 4] = [
        &["synth", "--n", "40", "--size", "32", "--seed", "21", "--out", "data"],
        &["augment", "--manifest", "data/train.csv", "--out", "aug", "--seed", "21", "--cutmix", "8"],
        &["train", "--config", "cfg.json", "--seed", "21"],
        &["eval", "--checkpoint", "run/best.ckpt", "--manifest", "data/test.csv", "--out", "ev"],
    ];
    for args in steps {
        let out = Command::new(bin)
            .current_dir(dir)
            .args(args)
            .args(["--threads", "1"])
            .output()
            .map_err(|e| e.to_string())?;
        ensure(
            out.status.success(),
            format!("{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr).trim()),
        )?;
    }
    Ok(())
}

// 8. End-to-end determinism.
fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipeline(a.path())?;
    pipeline(b.path())?;
    let files = [
        "data/manifest.csv",
        "data/train.csv",
        "data/test.csv",
        "aug/manifest.csv",
        "run/trace.csv",
        "run/final.ckpt",
        "run/best.ckpt",
        "ev/report.json",
        "ev/predictions.csv",
        "ev/cmc.csv",
        "ev/histogram.csv",
    ];
    for f in files {
        let x = fs::read(a.path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        let y = fs::read(b.path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        ensure(x == y, format!("{f} differs between runs"))?;
    }
    Ok(format!("{} artifacts byte-identical across two runs", files.len()))
}

// 9. Checkpoint round trip.
fn checkpoint_round_trip() -> Outcome {
    let cfg = VitConfig::toy(64);
    let mut w = VitWeights::init(&cfg, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for t in w.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.gen_range(-0.1f32..0.1);
        }
    }
    let pre = PreprocessConfig::new(64, 64);
    let batch = preprocess_all(&synth_dataset(4, (64, 64), 2).unwrap(), &pre).unwrap();
    let refs: Vec<&Image> = batch.iter().map(|s| &s.image).collect();
    let input = stack_images(&cfg, &refs).unwrap();
    let before = forward(&w, &input, 4).unwrap().outputs().to_vec();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("w.ckpt");
    save_checkpoint(&w, &json!({}), &path).map_err(|e| e.to_string())?;
    let loaded = load_weights(&cfg, &path).map_err(|e| e.to_string())?;
    let after = forward(&loaded, &input, 4).unwrap().outputs().to_vec();
    let same = before.iter().zip(&after).all(|(x, y)| x.to_bits() == y.to_bits());
    ensure(loaded == w && same, "outputs differ after reload")?;
    Ok(format!("{} outputs bit-identical", before.len()))
}

fn report(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    match &res {
        Ok(d) => println!("criterion {n} [{name}]: PASS - {d}"),
        Err(d) => println!("criterion {n} [{name}]: FAIL - {d}"),
    }
    res.is_ok()
}

fn main() {
    let mut ok = Vec::new();
    ok.push(report(1, "gradient check", gradient_check));
    ok.push(report(2, "cutmix label oracle", cutmix_oracle));
    ok.push(report(3, "replacement arithmetic", replacement));
    ok.push(report(4, "metric oracles", metric_oracles));

    let (train_set, test_set, pre) = toy_data();
    let run = catch_unwind(|| toy_run(&train_set, &test_set, 0, true)).ok();
    match &run {
        Some(run) => {
            ok.push(report(5, "toy training", || toy_training(run)));
            ok.push(report(6, "augmentation ablation", || {
                ablation(&train_set, &test_set, run.report.mae)
            }));
            ok.push(report(7, "attention maps", || attention(run, &test_set, &pre)));
        }
        None => {
            for (n, name) in [(5, "toy training"), (6, "augmentation ablation"), (7, "attention maps")] {
                ok.push(report(n, name, || Err("toy training run failed".into())));
            }
        }
    }
    ok.push(report(8, "end-to-end determinism", determinism));
    ok.push(report(9, "checkpoint round trip", checkpoint_round_trip));

    let passed = ok.iter().filter(|&&b| b).count();
    println!("acceptance: {passed}/{} criteria passed", ok.len());
    if passed != ok.len() {
        std::process::exit(1);
    }
}
