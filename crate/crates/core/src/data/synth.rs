//! Synthetic radiograph-like images with analytically known scores.
//!
//! Each image is a smooth dark background (values at most 0.35) with up to
//! three bright elliptical "opacities" per half (values at least 0.6). The
//! score of a half is its opacity coverage quantised into five bands:
//! `min(4, floor(5 * coverage / 0.76))`. Because background and blob values
//! are separated by [`BLOB_THRESHOLD`], the mask, and therefore the label,
//! can be recovered from the emitted pixels alone.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sample::{CxrSample, ScoreKind};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::seeds;

/// Pixels brighter than this belong to an opacity.
pub const BLOB_THRESHOLD: f32 = 0.5;

const BACKGROUND_MAX: f64 = 0.35;
const BLOB_MIN: f64 = 0.62;
const MAX_BLOBS_PER_SIDE: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

/// An ellipse drawn only inside the columns of its side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub side: Side,
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub angle: f64,
}

impl Blob {
    fn contains(&self, x: f64, y: f64, scale: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = (dx * c + dy * s) / (self.rx * scale);
        let v = (-dx * s + dy * c) / (self.ry * scale);
        u * u + v * v <= 1.0
    }

    /// Normalised radial position in `[0, 1]` inside the ellipse.
    fn radial(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = (dx * c + dy * s) / self.rx;
        let v = (-dx * s + dy * c) / self.ry;
        (u * u + v * v).sqrt().min(1.0)
    }
}

/// Full description of one synthetic image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthLayout {
    pub height: usize,
    pub width: usize,
    /// Background level, vertical gradient, and two sinusoid amplitudes.
    pub background: [f64; 4],
    pub blobs: Vec<Blob>,
}

fn side_columns(side: Side, width: usize) -> std::ops::Range<usize> {
    match side {
        Side::Left => 0..width / 2,
        Side::Right => width / 2..width,
    }
}

fn blob_mask(height: usize, width: usize, blobs: &[Blob], scale: f64) -> Vec<bool> {
    let mut mask = vec![false; height * width];
    for b in blobs {
        for y in 0..height {
            for x in side_columns(b.side, width) {
                if b.contains(x as f64 + 0.5, y as f64 + 0.5, scale) {
                    mask[y * width + x] = true;
                }
            }
        }
    }
    mask
}

/// Score of one half from its opacity pixel count.
pub fn coverage_score(covered: usize, area: usize) -> u8 {
    let fraction = covered as f64 / area as f64;
    ((5.0 * fraction / 0.76).floor() as u8).min(4)
}

fn side_scores(mask: &[bool], height: usize, width: usize) -> (u8, u8) {
    let count = |side| {
        let cols = side_columns(side, width);
        let area = cols.len() * height;
        let n = (0..height)
            .flat_map(|y| cols.clone().map(move |x| y * width + x))
            .filter(|&i| mask[i])
            .count();
        coverage_score(n, area)
    };
    (count(Side::Left), count(Side::Right))
}

/// Render a layout to a one-channel image and return it with its
/// `(left, right)` scores.
pub fn render_layout(layout: &SynthLayout) -> Result<(Image, u8, u8)> {
    let (h, w) = (layout.height, layout.width);
    if h == 0 || w < 2 {
        return Err(Error::Argument(format!("synthetic image size {h}x{w} too small")));
    }
    let mask = blob_mask(h, w, &layout.blobs, 1.0);
    let [base, grad, a1, a2] = layout.background;
    let mut img = Image::filled(h, w, 1, 0.0);
    for y in 0..h {
        for x in 0..w {
            let fy = y as f64 / h as f64;
            let fx = x as f64 / w as f64;
            let v = if mask[y * w + x] {
                let r = layout
                    .blobs
                    .iter()
                    .filter(|b| side_columns(b.side, w).contains(&x))
                    .filter(|b| b.contains(x as f64 + 0.5, y as f64 + 0.5, 1.0))
                    .map(|b| b.radial(x as f64 + 0.5, y as f64 + 0.5))
                    .fold(1.0, f64::min);
                BLOB_MIN + 0.25 * (1.0 - r)
            } else {
                let v = base
                    + grad * fy
                    + a1 * (std::f64::consts::PI * fx).sin()
                    + a2 * (2.0 * std::f64::consts::PI * (fx + fy)).cos();
                v.clamp(0.0, BACKGROUND_MAX)
            };
            img.set(y, x, 0, v as f32);
        }
    }
    let (l, r) = side_scores(&mask, h, w);
    Ok((img, l, r))
}

/// Coverage band `[lo, hi)` whose quantised score is `score`.
fn band(score: u8) -> (f64, f64) {
    let step = 0.76 / 5.0;
    if score >= 4 {
        (4.0 * step, 1.0)
    } else {
        (score as f64 * step, (score as f64 + 1.0) * step)
    }
}

fn draw_side<R: Rng>(rng: &mut R, side: Side, score: u8, height: usize, width: usize) -> Vec<Blob> {
    if score == 0 {
        return Vec::new();
    }
    let cols = side_columns(side, width);
    let half_w = cols.len() as f64;
    let count = rng.gen_range(1..=MAX_BLOBS_PER_SIDE);
    let mut blobs: Vec<Blob> = (0..count)
        .map(|_| Blob {
            side,
            cx: cols.start as f64 + rng.gen_range(0.2..0.8) * half_w,
            cy: rng.gen_range(0.15..0.85) * height as f64,
            rx: rng.gen_range(0.5..1.5),
            ry: rng.gen_range(0.5..1.5),
            angle: rng.gen_range(0.0..std::f64::consts::PI),
        })
        .collect();

    // Scale all radii together so coverage lands inside the target band.
    let (lo, hi) = band(score);
    let target = lo + rng.gen_range(0.25..0.75) * (hi - lo);
    let area = (cols.len() * height) as f64;
    let coverage = |s: f64| {
        blob_mask(height, width, &blobs, s).iter().filter(|&&m| m).count() as f64 / area
    };
    let (mut a, mut b) = (0.0, 2.0 * (height + width) as f64);
    for _ in 0..40 {
        let mid = 0.5 * (a + b);
        if coverage(mid) >= target {
            b = mid;
        } else {
            a = mid;
        }
    }
    for blob in &mut blobs {
        blob.rx *= b;
        blob.ry *= b;
    }
    blobs
}

/// Random layout whose total score is uniform over `0..=8`.
pub fn synth_layout(height: usize, width: usize, seed: u64, index: u64) -> SynthLayout {
    let mut rng = seeds::rng(seed, "synth", index);
    let total: u8 = rng.gen_range(0..=8);
    let left: u8 = rng.gen_range(total.saturating_sub(4)..=total.min(4));
    let right = total - left;
    let background = [
        rng.gen_range(0.06..0.14),
        rng.gen_range(0.0..0.1),
        rng.gen_range(0.0..0.06),
        rng.gen_range(0.0..0.03),
    ];
    let mut blobs = draw_side(&mut rng, Side::Left, left, height, width);
    blobs.extend(draw_side(&mut rng, Side::Right, right, height, width));
    SynthLayout {
        height,
        width,
        background,
        blobs,
    }
}

pub fn synth_sample(height: usize, width: usize, seed: u64, index: u64) -> Result<CxrSample> {
    let layout = synth_layout(height, width, seed, index);
    let (image, l, r) = render_layout(&layout)?;
    Ok(CxrSample::with_lungs(
        image,
        l as f64,
        r as f64,
        ScoreKind::Synthetic,
        format!("synth-{seed}-{index:05}"),
    ))
}

/// `n` synthetic samples; sample `i` depends only on `(seed, i)`.
pub fn synth_dataset(n: usize, size: (usize, usize), seed: u64) -> Result<Vec<CxrSample>> {
    if n == 0 {
        return Err(Error::Argument("synthetic dataset size must be positive".into()));
    }
    (0..n as u64).map(|i| synth_sample(size.0, size.1, seed, i)).collect()
}
