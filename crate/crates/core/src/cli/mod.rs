//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for invalid arguments, configuration or
//! input data, 2 for runtime failures. Every subcommand writes `run.json`
//! into its output directory with the fully resolved settings.

mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{json, Value};

pub use config::{apply_override, RunConfig};

use crate::augmentation::{expand_dataset, hflip, score_cutmix, score_mixup, CutMixParams};
use crate::data::{
    load_manifest, preprocess, preprocess_all, save_samples, synth_dataset, write_manifest,
    CxrSample, PreprocessConfig,
};
use crate::error::{Error, Result};
use crate::evaluation::{cmc_svg, evaluate, histogram_svg, scatter_svg, EvalConfig, EvalReport};
use crate::image::{png, Image};
use crate::model::{
    extract_attention, load_weights, read_checkpoint, save_checkpoint, upsample_map, Aggregation,
    VitWeights,
};
use crate::seeds;
use crate::training::train_with_progress;

#[derive(Parser, Debug)]
#[command(name = "vitreg", version, about = "Vision-transformer lung severity regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scored dataset with train/test manifests.
    Synth(SynthArgs),
    /// Expand a manifest with lung replacement and optional extra augmentations.
    Augment(AugmentArgs),
    /// Train a regressor from a JSON run configuration.
    Train(TrainArgs),
    /// Score a manifest with a checkpoint.
    Eval(EvalArgs),
    /// Render the CLS attention map of one image.
    Attnmap(AttnArgs),
    /// Render SVG plots and a summary from an evaluation report.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Worker threads for batched compute.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    /// Image side length, or HxW.
    #[arg(long, default_value = "64")]
    size: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Trailing fraction of samples written to test.csv.
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip lung-and-score replacement.
    #[arg(long)]
    no_replace: bool,
    /// Append a mirrored copy of every sample.
    #[arg(long)]
    hflip: bool,
    /// Number of CutMix samples to append.
    #[arg(long, default_value_t = 0)]
    cutmix: usize,
    /// Number of MixUp samples to append.
    #[arg(long, default_value_t = 0)]
    mixup: usize,
    #[arg(long, default_value_t = 0.5)]
    lambda_min: f64,
    #[arg(long, default_value_t = 0.9)]
    lambda_max: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Dotted-path override, e.g. `train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; replaces `out_dir` from the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.25)]
    cmc_step: f64,
    #[arg(long, default_value_t = 16)]
    bins: usize,
    /// Also write SVG plots.
    #[arg(long)]
    plots: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct AttnArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// `last` or a zero-based layer index.
    #[arg(long, default_value = "last")]
    layer: String,
    /// `mean`, `head:N` or `rollout`.
    #[arg(long, default_value = "mean")]
    aggregation: String,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// `report.json` written by `eval`.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => {
            let threads = a.common.threads;
            with_threads(threads, || synth(a))
        }
        Command::Augment(a) => {
            let threads = a.common.threads;
            with_threads(threads, || augment(a))
        }
        Command::Train(a) => {
            let threads = a.common.threads;
            with_threads(threads, || train(a))
        }
        Command::Eval(a) => {
            let threads = a.common.threads;
            with_threads(threads, || eval(a))
        }
        Command::Attnmap(a) => {
            let threads = a.common.threads;
            with_threads(threads, || attnmap(a))
        }
        Command::Report(a) => report(a),
    }
}

fn with_threads(threads: usize, f: impl FnOnce() -> Result<()> + Send) -> Result<()> {
    if threads == 0 {
        return Err(Error::Argument("--threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_run_json(dir: &Path, command: &str, config: Value) -> Result<()> {
    let doc = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
    });
    let text = serde_json::to_string_pretty(&doc).expect("json value serialises");
    write_file(&dir.join("run.json"), text + "\n")
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Argument(format!("invalid size `{s}`")))
    };
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((parse(h)?, parse(w)?)),
        None => parse(s).map(|n| (n, n)),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let (h, w) = parse_size(&a.size)?;
    if !(0.0..1.0).contains(&a.test_fraction) {
        return Err(Error::Argument("--test-fraction must lie in [0, 1)".into()));
    }
    let samples = synth_dataset(a.n, (h, w), a.seed)?;
    create_dir(&a.out)?;
    let rows = save_samples(&a.out, "manifest.csv", &samples)?;
    let n_test = (a.n as f64 * a.test_fraction).round() as usize;
    let n_train = a.n - n_test;
    write_manifest(&a.out.join("train.csv"), &rows[..n_train])?;
    write_manifest(&a.out.join("test.csv"), &rows[n_train..])?;
    write_run_json(
        &a.out,
        "synth",
        json!({
            "n": a.n, "height": h, "width": w, "seed": a.seed,
            "test_fraction": a.test_fraction, "n_train": n_train, "n_test": n_test,
        }),
    )?;
    eprintln!("wrote {} samples ({n_train} train, {n_test} test) to {}", a.n, a.out.display());
    Ok(())
}

fn augment(a: AugmentArgs) -> Result<()> {
    let params = CutMixParams {
        lambda_min: a.lambda_min,
        lambda_max: a.lambda_max,
        rng_seed: a.seed,
    };
    params.validate()?;
    let originals = load_manifest(&a.manifest)?;
    if originals.is_empty() {
        return Err(Error::Argument("manifest has no rows".into()));
    }
    let base = if a.no_replace {
        originals
    } else {
        expand_dataset(&originals, seeds::derive(a.seed, "replacement", 0))?
    };
    let mut out = base.clone();
    if a.hflip {
        out.extend(base.iter().map(hflip));
    }
    let mut rng = seeds::rng(a.seed, "augment-cutmix", 0);
    for _ in 0..a.cutmix {
        let (x, y) = pick_pair(&base, &mut rng);
        out.push(score_cutmix(x, y, &params, &mut rng)?.sample);
    }
    let mut rng = seeds::rng(a.seed, "augment-mixup", 0);
    for _ in 0..a.mixup {
        let (x, y) = pick_pair(&base, &mut rng);
        let lambda = rng.gen_range(a.lambda_min..=a.lambda_max);
        out.push(score_mixup(x, y, lambda)?);
    }
    create_dir(&a.out)?;
    save_samples(&a.out, "manifest.csv", &out)?;
    write_run_json(
        &a.out,
        "augment",
        json!({
            "manifest": a.manifest, "seed": a.seed, "replace": !a.no_replace,
            "hflip": a.hflip, "cutmix": a.cutmix, "mixup": a.mixup,
            "lambda_min": a.lambda_min, "lambda_max": a.lambda_max,
            "n_in": base.len(), "n_out": out.len(),
        }),
    )?;
    eprintln!("wrote {} samples to {}", out.len(), a.out.display());
    Ok(())
}

fn pick_pair<'a, R: Rng>(samples: &'a [CxrSample], rng: &mut R) -> (&'a CxrSample, &'a CxrSample) {
    let mut it = samples.choose_multiple(rng, 2.min(samples.len()));
    let x = it.next().expect("non-empty");
    (x, it.next().unwrap_or(x))
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config, &a.overrides)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(out) = a.out {
        cfg.out_dir = out;
    }
    cfg.train.seed = cfg.seed;
    cfg.validate()?;

    let train_set = preprocess_all(&load_manifest(&cfg.train_manifest)?, &cfg.preprocess)?;
    let val_set = match &cfg.val_manifest {
        Some(p) => preprocess_all(&load_manifest(p)?, &cfg.preprocess)?,
        None => Vec::new(),
    };
    let weights = match &cfg.init_checkpoint {
        Some(p) => load_weights(&cfg.model, p)?,
        None => VitWeights::init(&cfg.model, cfg.seed)?,
    };
    create_dir(&cfg.out_dir)?;
    write_run_json(&cfg.out_dir, "train", serde_json::to_value(&cfg).expect("serialisable"))?;

    let outcome = train_with_progress(weights, &train_set, &val_set, &cfg.train, |r| {
        let val = match (r.val_mae, r.val_pc) {
            (Some(m), Some(p)) => format!(" val_mae {m:.4} val_pc {p:.4}"),
            (Some(m), None) => format!(" val_mae {m:.4}"),
            _ => String::new(),
        };
        eprintln!("epoch {:>3} loss {:.4}{val}", r.epoch, r.train_loss);
    })?;

    let meta = |epoch: usize| {
        json!({ "epoch": epoch, "preprocess": cfg.preprocess, "train": cfg.train, "seed": cfg.seed })
    };
    save_checkpoint(&outcome.weights, &meta(cfg.train.epochs), &cfg.out_dir.join("final.ckpt"))?;
    let (best_epoch, best) = match &outcome.best {
        Some((e, w)) => (*e, w),
        None => (cfg.train.epochs, &outcome.weights),
    };
    save_checkpoint(best, &meta(best_epoch), &cfg.out_dir.join("best.ckpt"))?;
    write_file(&cfg.out_dir.join("trace.csv"), outcome.trace.to_csv())?;
    eprintln!("checkpoints written to {}", cfg.out_dir.display());
    Ok(())
}

/// Preprocessing stored with a checkpoint, or the model-sized default.
fn checkpoint_preprocess(meta: &Value, weights: &VitWeights<f32>) -> Result<PreprocessConfig> {
    match meta.get("preprocess") {
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|e| Error::Checkpoint(format!("preprocess metadata: {e}"))),
        None => {
            let c = &weights.config;
            let mut p = PreprocessConfig::new(c.image_height, c.image_width);
            p.normalize_mean = vec![0.5; c.channels];
            p.normalize_std = vec![0.25; c.channels];
            Ok(p)
        }
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    let ck = read_checkpoint(&a.checkpoint)?;
    let pre = checkpoint_preprocess(&ck.metadata, &ck.weights)?;
    let test_set = preprocess_all(&load_manifest(&a.manifest)?, &pre)?;
    let cfg = EvalConfig {
        batch_size: a.batch_size,
        cmc_step: a.cmc_step,
        histogram_bins: a.bins,
        ..EvalConfig::default()
    };
    let report = evaluate(&ck.weights, &test_set, &cfg)?;
    create_dir(&a.out)?;
    write_report_files(&a.out, &report, a.plots)?;
    write_run_json(
        &a.out,
        "eval",
        json!({ "checkpoint": a.checkpoint, "manifest": a.manifest, "eval": cfg, "preprocess": pre }),
    )?;
    match report.pearson {
        Some(pc) => println!("n {} mae {:.4} pearson {:.4}", report.n, report.mae, pc),
        None => println!("n {} mae {:.4} pearson undefined", report.n, report.mae),
    }
    Ok(())
}

fn write_report_files(dir: &Path, report: &EvalReport, plots: bool) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("report serialises");
    write_file(&dir.join("report.json"), json + "\n")?;
    write_file(&dir.join("predictions.csv"), report.predictions_csv())?;
    write_file(&dir.join("cmc.csv"), report.cmc_csv())?;
    write_file(&dir.join("histogram.csv"), report.histogram_csv())?;
    if plots {
        write_plots(dir, report)?;
    }
    Ok(())
}

fn write_plots(dir: &Path, report: &EvalReport) -> Result<()> {
    write_file(&dir.join("cmc.svg"), cmc_svg(&report.cmc))?;
    write_file(&dir.join("histogram.svg"), histogram_svg(&report.histogram))?;
    write_file(&dir.join("scatter.svg"), scatter_svg(report))
}

fn parse_layer(s: &str, depth: usize) -> Result<usize> {
    if s == "last" {
        return Ok(depth - 1);
    }
    s.parse()
        .map_err(|_| Error::Argument(format!("--layer must be `last` or an index, got `{s}`")))
}

fn parse_aggregation(s: &str) -> Result<Aggregation> {
    match s {
        "mean" => Ok(Aggregation::MeanHeads),
        "rollout" => Ok(Aggregation::Rollout),
        _ => s
            .strip_prefix("head:")
            .and_then(|h| h.parse().ok())
            .map(Aggregation::SingleHead)
            .ok_or_else(|| {
                Error::Argument(format!("--aggregation must be mean, head:N or rollout, got `{s}`"))
            }),
    }
}

fn attnmap(a: AttnArgs) -> Result<()> {
    let ck = read_checkpoint(&a.checkpoint)?;
    let pre = checkpoint_preprocess(&ck.metadata, &ck.weights)?;
    let layer = parse_layer(&a.layer, ck.weights.config.depth)?;
    let aggregation = parse_aggregation(&a.aggregation)?;
    if !a.image.is_file() {
        return Err(Error::ingest(None, format!("image {} not found", a.image.display())));
    }
    let original = png::read(&a.image)?;
    let input = preprocess(&original, &pre)?;
    let map = extract_attention(&ck.weights, &input, layer, aggregation)?;

    let (h, w, _) = original.dims();
    let heat = normalise(&upsample_map(&map, h, w)?);
    let overlay = overlay(&original, &heat)?;
    create_dir(&a.out)?;
    png::write(&a.out.join("heatmap.png"), &heat)?;
    png::write(&a.out.join("overlay.png"), &overlay)?;
    let mut csv = String::new();
    for r in 0..map.rows {
        let row: Vec<String> = (0..map.cols).map(|c| map.at(r, c).to_string()).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    write_file(&a.out.join("attention.csv"), csv)?;
    write_run_json(
        &a.out,
        "attnmap",
        json!({
            "checkpoint": a.checkpoint, "image": a.image, "layer": layer,
            "aggregation": aggregation, "cls_weight": map.cls_weight,
            "left_fraction": map.left_fraction(),
        }),
    )?;
    println!(
        "layer {layer} grid {}x{} left-half mass {:.3}",
        map.rows,
        map.cols,
        map.left_fraction()
    );
    Ok(())
}

/// Min-max scale a one-channel image to `[0, 1]`.
fn normalise(img: &Image) -> Image {
    let (lo, hi) = img
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = hi - lo;
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
    out
}

fn overlay(base: &Image, heat: &Image) -> Result<Image> {
    let (h, w, c) = base.dims();
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let g = (0..c).map(|k| base.get(y, x, k)).sum::<f32>() / c as f32;
            let t = heat.get(y, x, 0);
            let dim = g * (1.0 - 0.5 * t);
            data.extend_from_slice(&[dim + 0.5 * t, dim, dim]);
        }
    }
    Image::new(h, w, 3, data)
}

fn report(a: ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&a.report).map_err(|e| Error::io(&a.report, e))?;
    let report: EvalReport = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", a.report.display())))?;
    create_dir(&a.out)?;
    write_plots(&a.out, &report)?;
    let pc = report
        .pearson
        .map(|p| format!("{p:.4}"))
        .unwrap_or_else(|| "undefined".into());
    let mut summary = format!("n: {}\nmae: {:.4}\npearson: {pc}\n", report.n, report.mae);
    for t in [0.5, 1.0, 2.0] {
        if let Some(f) = report.cmc_at(t) {
            summary.push_str(&format!("within {t}: {f:.3}\n"));
        }
    }
    write_file(&a.out.join("summary.txt"), &summary)?;
    write_run_json(&a.out, "report", json!({ "report": a.report }))?;
    print!("{summary}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(parse_size("64").unwrap(), (64, 64));
        assert_eq!(parse_size("32x48").unwrap(), (32, 48));
        assert!(parse_size("0").is_err());
        assert!(parse_size("abc").is_err());
    }

    #[test]
    fn aggregations() {
        assert_eq!(parse_aggregation("mean").unwrap(), Aggregation::MeanHeads);
        assert_eq!(parse_aggregation("head:2").unwrap(), Aggregation::SingleHead(2));
        assert_eq!(parse_aggregation("rollout").unwrap(), Aggregation::Rollout);
        assert!(parse_aggregation("head:x").is_err());
        assert_eq!(parse_layer("last", 2).unwrap(), 1);
        assert!(parse_layer("top", 2).is_err());
    }

    #[test]
    fn parse_errors_exit_with_one() {
        assert_eq!(run(["vitreg", "bogus"]), 1);
        assert_eq!(run(["vitreg", "synth", "--n", "x", "--out", "o"]), 1);
        assert_eq!(run(["vitreg", "--help"]), 0);
    }
}
