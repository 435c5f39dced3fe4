//! Browser bindings: synthetic image generation, score-correlated CutMix,
//! and a small in-page model whose CLS attention can be inspected.

use vitreg::augmentation::{score_cutmix, CutMixParams};
use vitreg::data::{preprocess, preprocess_all, synth_dataset, synth_sample, CxrSample, PreprocessConfig};
use vitreg::image::Image;
use vitreg::model::{extract_attention, predict, upsample_map, Aggregation, VitConfig, VitWeights};
use vitreg::seeds;
use vitreg::training::{train, TrainConfig};
use wasm_bindgen::prelude::*;

const MAX_SIZE: u32 = 256;

fn check_size(size: u32) -> Result<usize, String> {
    if (8..=MAX_SIZE).contains(&size) {
        Ok(size as usize)
    } else {
        Err(format!("size must lie in 8..={MAX_SIZE}"))
    }
}

/// Grayscale or RGB `[0, 1]` image as RGBA bytes.
fn rgba(img: &Image) -> Vec<u8> {
    let (h, w, c) = img.dims();
    let mut out = Vec::with_capacity(h * w * 4);
    for y in 0..h {
        for x in 0..w {
            let px = |k: usize| (img.get(y, x, k.min(c - 1)).clamp(0.0, 1.0) * 255.0).round() as u8;
            out.extend_from_slice(&[px(0), px(1), px(2), 255]);
        }
    }
    out
}

#[wasm_bindgen]
pub struct SynthView {
    width: u32,
    height: u32,
    rgba: Vec<u8>,
    left: f64,
    right: f64,
}

#[wasm_bindgen]
impl SynthView {
    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
    pub fn left(&self) -> f64 {
        self.left
    }
    pub fn right(&self) -> f64 {
        self.right
    }
    pub fn total(&self) -> f64 {
        self.left + self.right
    }
}

fn sample(size: usize, seed: u32, index: u32) -> Result<CxrSample, String> {
    synth_sample(size, size, seed as u64, index as u64).map_err(|e| e.to_string())
}

/// Render synthetic image `index` of the dataset with `seed`.
#[wasm_bindgen]
pub fn synth_image(size: u32, seed: u32, index: u32) -> Result<SynthView, String> {
    let s = sample(check_size(size)?, seed, index)?;
    Ok(SynthView {
        width: s.image.width() as u32,
        height: s.image.height() as u32,
        rgba: rgba(&s.image),
        left: s.score_left.unwrap_or(0.0),
        right: s.score_right.unwrap_or(0.0),
    })
}

#[wasm_bindgen]
pub struct CutMixView {
    size: u32,
    rgba: Vec<u8>,
    region: [u32; 4],
    lambda: f64,
    score_a: f64,
    score_b: f64,
    label: f64,
}

#[wasm_bindgen]
impl CutMixView {
    pub fn size(&self) -> u32 {
        self.size
    }
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
    /// `[y0, x0, height, width]` of the pasted box.
    pub fn region(&self) -> Vec<u32> {
        self.region.to_vec()
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn score_a(&self) -> f64 {
        self.score_a
    }
    pub fn score_b(&self) -> f64 {
        self.score_b
    }
    pub fn label(&self) -> f64 {
        self.label
    }
}

/// Paste a box of image `index_b` into image `index_a` and mix their scores.
#[wasm_bindgen]
pub fn cutmix(
    size: u32,
    seed: u32,
    index_a: u32,
    index_b: u32,
    draw: u32,
    lambda_min: f64,
    lambda_max: f64,
) -> Result<CutMixView, String> {
    let n = check_size(size)?;
    let a = sample(n, seed, index_a)?;
    let b = sample(n, seed, index_b)?;
    let params = CutMixParams {
        lambda_min,
        lambda_max,
        rng_seed: 0,
    };
    let mut rng = seeds::rng(seed as u64, "web-cutmix", draw as u64);
    let m = score_cutmix(&a, &b, &params, &mut rng).map_err(|e| e.to_string())?;
    let r = m.region;
    Ok(CutMixView {
        size,
        rgba: rgba(&m.sample.image),
        region: [r.y0 as u32, r.x0 as u32, r.height as u32, r.width as u32],
        lambda: m.lambda,
        score_a: a.score_total,
        score_b: b.score_total,
        label: m.sample.score_total,
    })
}

#[wasm_bindgen]
pub struct AttentionView {
    size: u32,
    rgba: Vec<u8>,
    grid: Vec<f64>,
    grid_size: u32,
    left_fraction: f64,
    prediction: f64,
    truth: f64,
}

#[wasm_bindgen]
impl AttentionView {
    pub fn size(&self) -> u32 {
        self.size
    }
    /// Image with the attention heatmap blended into the red channel.
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
    pub fn grid(&self) -> Vec<f64> {
        self.grid.clone()
    }
    pub fn grid_size(&self) -> u32 {
        self.grid_size
    }
    pub fn left_fraction(&self) -> f64 {
        self.left_fraction
    }
    pub fn prediction(&self) -> f64 {
        self.prediction
    }
    pub fn truth(&self) -> f64 {
        self.truth
    }
}

/// A small regressor trained in the page on synthetic images.
#[wasm_bindgen]
pub struct Demo {
    seed: u64,
    pre: PreprocessConfig,
    raw: Vec<CxrSample>,
    train_set: Vec<CxrSample>,
    weights: VitWeights<f32>,
    epochs: u32,
    augment: bool,
}

#[wasm_bindgen]
impl Demo {
    /// `samples` images of 32x32 pixels with the given seed.
    #[wasm_bindgen(constructor)]
    pub fn new(samples: u32, seed: u32) -> Result<Demo, String> {
        if !(2..=1000).contains(&samples) {
            return Err("samples must lie in 2..=1000".into());
        }
        let size = 32;
        let pre = PreprocessConfig::new(size, size);
        let raw = synth_dataset(samples as usize, (size, size), seed as u64).map_err(|e| e.to_string())?;
        let train_set = preprocess_all(&raw, &pre).map_err(|e| e.to_string())?;
        let cfg = VitConfig {
            embed_dim: 32,
            mlp_hidden: 64,
            fc1_width: 32,
            ..VitConfig::toy(size)
        };
        let weights = VitWeights::init(&cfg, seed as u64).map_err(|e| e.to_string())?;
        Ok(Demo {
            seed: seed as u64,
            pre,
            raw,
            train_set,
            weights,
            epochs: 0,
            augment: true,
        })
    }

    pub fn set_augment(&mut self, on: bool) {
        self.augment = on;
    }

    pub fn epochs(&self) -> u32 {
        self.epochs
    }

    pub fn samples(&self) -> u32 {
        self.raw.len() as u32
    }

    /// Run `epochs` more epochs; returns the last epoch's mean training loss.
    pub fn train(&mut self, epochs: u32, learning_rate: f64) -> Result<f64, String> {
        let cfg = TrainConfig {
            epochs: epochs.max(1) as usize,
            learning_rate,
            batch_size: 16,
            seed: seeds::derive(self.seed, "web-train", self.epochs as u64),
            online_cutmix: self.augment,
            offline_replacement: self.augment,
            ..TrainConfig::default()
        };
        let out = train(self.weights.clone(), &self.train_set, &[], &cfg).map_err(|e| e.to_string())?;
        self.weights = out.weights;
        self.epochs += epochs.max(1);
        Ok(out.trace.epochs.last().map(|r| r.train_loss).unwrap_or(f64::NAN))
    }

    /// Mean absolute error of the current model on its own training images.
    pub fn train_mae(&self) -> Result<f64, String> {
        let imgs: Vec<&Image> = self.train_set.iter().map(|s| &s.image).collect();
        let preds = predict(&self.weights, &imgs).map_err(|e| e.to_string())?;
        let sum: f64 = preds
            .iter()
            .zip(&self.train_set)
            .map(|(p, s)| (p.p_total - s.score_total).abs())
            .sum();
        Ok(sum / preds.len() as f64)
    }

    /// CLS attention for training image `index`. `aggregation` is `mean`,
    /// `head:N` or `rollout`; `layer` counts from 0.
    pub fn attention(&self, index: u32, layer: u32, aggregation: &str) -> Result<AttentionView, String> {
        let s = self
            .raw
            .get(index as usize)
            .ok_or_else(|| format!("index must be below {}", self.raw.len()))?;
        let agg = match aggregation {
            "mean" => Aggregation::MeanHeads,
            "rollout" => Aggregation::Rollout,
            other => other
                .strip_prefix("head:")
                .and_then(|h| h.parse().ok())
                .map(Aggregation::SingleHead)
                .ok_or_else(|| format!("unknown aggregation `{other}`"))?,
        };
        let input = preprocess(&s.image, &self.pre).map_err(|e| e.to_string())?;
        let map = extract_attention(&self.weights, &input, layer as usize, agg).map_err(|e| e.to_string())?;
        let (h, w, _) = s.image.dims();
        let heat = upsample_map(&map, h, w).map_err(|e| e.to_string())?;
        let (lo, hi) = heat
            .data()
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(l, u), &v| (l.min(v), u.max(v)));
        let mut blended = Vec::with_capacity(h * w * 4);
        for y in 0..h {
            for x in 0..w {
                let g = s.image.get(y, x, 0);
                let t = if hi > lo { (heat.get(y, x, 0) - lo) / (hi - lo) } else { 0.0 };
                let dim = g * (1.0 - 0.6 * t);
                let px = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                blended.extend_from_slice(&[px(dim + 0.6 * t), px(dim), px(dim), 255]);
            }
        }
        let pred = predict(&self.weights, &[&input]).map_err(|e| e.to_string())?[0];
        Ok(AttentionView {
            size: w as u32,
            rgba: blended,
            grid: map.grid.clone(),
            grid_size: map.cols as u32,
            left_fraction: map.left_fraction(),
            prediction: pred.p_total,
            truth: s.score_total,
        })
    }
}
