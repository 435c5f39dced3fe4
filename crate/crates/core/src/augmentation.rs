//! Score-aware augmentations.
//!
//! Every operation propagates labels exactly: half-image lung replacement
//! adds the constituent per-lung scores, CutMix and MixUp take the
//! area- (or weight-) weighted convex combination of the two totals, and a
//! horizontal flip swaps the per-lung scores. Randomness always comes from
//! an explicit RNG argument.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::CxrSample;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::seeds;

/// Number of independent pairing rounds in [`expand_dataset`]; each round
/// adds one synthetic image per original.
pub const REPLACEMENT_ROUNDS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutMixParams {
    /// Bounds on the fraction of the base image that is kept.
    pub lambda_min: f64,
    pub lambda_max: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for CutMixParams {
    fn default() -> Self {
        CutMixParams {
            lambda_min: 0.5,
            lambda_max: 0.9,
            rng_seed: 0,
        }
    }
}

impl CutMixParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda_min > 0.0
            && self.lambda_min <= self.lambda_max
            && self.lambda_max < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Augmentation(format!(
                "CutMix requires 0 < lambda_min <= lambda_max < 1, got [{}, {}]",
                self.lambda_min, self.lambda_max
            )))
        }
    }
}

/// Rectangle pasted from the partner image, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutBox {
    pub y0: usize,
    pub x0: usize,
    pub height: usize,
    pub width: usize,
}

impl CutBox {
    /// Draw a box whose complement covers a fraction of the image uniform in
    /// `[lambda_min, lambda_max]` (up to pixel rounding). Aspect ratio is
    /// log-uniform in `[1/2, 2]`; the box always lies inside the image.
    pub fn draw<R: Rng + ?Sized>(
        image_height: usize,
        image_width: usize,
        params: &CutMixParams,
        rng: &mut R,
    ) -> CutBox {
        let target: f64 = rng.gen_range(params.lambda_min..=params.lambda_max);
        let log_aspect: f64 = rng.gen_range(-std::f64::consts::LN_2..=std::f64::consts::LN_2);
        let area = (1.0 - target) * (image_height * image_width) as f64;
        let aspect = log_aspect.exp();
        let width = ((area * aspect).sqrt().round() as usize).clamp(1, image_width);
        let height = ((area / width as f64).round() as usize).clamp(1, image_height);
        let y0 = rng.gen_range(0..=image_height - height);
        let x0 = rng.gen_range(0..=image_width - width);
        CutBox {
            y0,
            x0,
            height,
            width,
        }
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y0 + self.height).contains(&y) && (self.x0..self.x0 + self.width).contains(&x)
    }

    /// Fraction of an `image_height x image_width` image outside the box.
    pub fn retained_fraction(&self, image_height: usize, image_width: usize) -> f64 {
        let total = image_height * image_width;
        (total - self.height * self.width) as f64 / total as f64
    }

    /// Copy the box region of `src` into `dst` in place.
    pub fn paste(&self, dst: &mut [f32], src: &[f32], image_width: usize, channels: usize) {
        for y in self.y0..self.y0 + self.height {
            let start = (y * image_width + self.x0) * channels;
            let end = start + self.width * channels;
            dst[start..end].copy_from_slice(&src[start..end]);
        }
    }
}

/// `lambda * y_a + (1 - lambda) * y_b`, exact when the two scores agree and
/// never outside `[min, max]` of the inputs.
pub fn mix_scores(lambda: f64, y_a: f64, y_b: f64) -> f64 {
    let y = y_b + lambda * (y_a - y_b);
    y.clamp(y_a.min(y_b), y_a.max(y_b))
}

fn same_dims(a: &CxrSample, b: &CxrSample) -> Result<()> {
    if a.image.dims() != b.image.dims() {
        return Err(Error::Augmentation(format!(
            "image dimensions differ: {:?} vs {:?}",
            a.image.dims(),
            b.image.dims()
        )));
    }
    Ok(())
}

fn require_lungs(s: &CxrSample) -> Result<(f64, f64)> {
    s.lungs().ok_or_else(|| {
        Error::Augmentation(format!(
            "lung replacement requires individual ground truth scores; {} has none",
            s.source_id
        ))
    })
}

/// Splice the left half (columns `< W/2`) of `left` with the right half of `right`.
fn splice_halves(left: &Image, right: &Image) -> Image {
    let (h, w, c) = left.dims();
    let mid = w / 2;
    let mut out = right.clone();
    for y in 0..h {
        let start = y * w * c;
        out.data_mut()[start..start + mid * c].copy_from_slice(&left.data()[start..start + mid * c]);
    }
    out
}

/// Combined lung and score replacement. Returns `([a_left | b_right],
/// [b_left | a_right])` with totals `a.left + b.right` and `b.left + a.right`.
pub fn lung_score_replace(a: &CxrSample, b: &CxrSample) -> Result<(CxrSample, CxrSample)> {
    let (al, ar) = require_lungs(a)?;
    let (bl, br) = require_lungs(b)?;
    same_dims(a, b)?;
    let first = CxrSample::with_lungs(
        splice_halves(&a.image, &b.image),
        al,
        br,
        a.kind,
        format!("{}|{}", a.source_id, b.source_id),
    );
    let second = CxrSample::with_lungs(
        splice_halves(&b.image, &a.image),
        bl,
        ar,
        b.kind,
        format!("{}|{}", b.source_id, a.source_id),
    );
    Ok((first, second))
}

/// Originals followed by [`REPLACEMENT_ROUNDS`] rounds of lung replacement.
/// Each round shuffles the indices with a seeded RNG and pairs consecutive
/// entries, keeping both swap outputs. An even-sized input triples; with an
/// odd size the last index of each round stays unpaired (`3n - 2`).
pub fn expand_dataset(samples: &[CxrSample], seed: u64) -> Result<Vec<CxrSample>> {
    for s in samples {
        require_lungs(s)?;
    }
    let mut out = samples.to_vec();
    for round in 0..REPLACEMENT_ROUNDS {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut seeds::rng(seed, "lung-replacement", round as u64));
        for pair in order.chunks_exact(2) {
            let (x, y) = lung_score_replace(&samples[pair[0]], &samples[pair[1]])?;
            out.push(x);
            out.push(y);
        }
    }
    Ok(out)
}

/// Result of a CutMix: the mixed sample, the pasted box and the exact
/// retained fraction used in the label.
#[derive(Clone, Debug)]
pub struct CutMixed {
    pub sample: CxrSample,
    pub region: CutBox,
    pub lambda: f64,
}

/// Score-correlated CutMix: paste a box of `b` into `a` and label the result
/// `lambda * y_a + (1 - lambda) * y_b` with `lambda` the retained pixel
/// fraction of `a`. Per-lung scores are dropped.
pub fn score_cutmix<R: Rng + ?Sized>(
    a: &CxrSample,
    b: &CxrSample,
    params: &CutMixParams,
    rng: &mut R,
) -> Result<CutMixed> {
    params.validate()?;
    same_dims(a, b)?;
    let (h, w, c) = a.image.dims();
    let region = CutBox::draw(h, w, params, rng);
    let mut image = a.image.clone();
    region.paste(image.data_mut(), b.image.data(), w, c);
    let lambda = region.retained_fraction(h, w);
    let sample = CxrSample::total_only(
        image,
        mix_scores(lambda, a.score_total, b.score_total),
        a.kind,
        format!("cutmix({},{})", a.source_id, b.source_id),
    );
    Ok(CutMixed {
        sample,
        region,
        lambda,
    })
}

/// Pixelwise convex blend with the same label rule as CutMix.
pub fn score_mixup(a: &CxrSample, b: &CxrSample, lambda: f64) -> Result<CxrSample> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Argument(format!("MixUp lambda {lambda} outside [0, 1]")));
    }
    same_dims(a, b)?;
    if lambda == 1.0 {
        return Ok(a.clone());
    }
    if lambda == 0.0 {
        return Ok(b.clone());
    }
    let la = lambda as f32;
    let lb = 1.0 - la;
    let data = a
        .image
        .data()
        .iter()
        .zip(b.image.data())
        .map(|(&x, &y)| (la * x + lb * y).clamp(x.min(y), x.max(y)))
        .collect();
    let (h, w, c) = a.image.dims();
    Ok(CxrSample::total_only(
        Image::new(h, w, c, data)?,
        mix_scores(lambda, a.score_total, b.score_total),
        a.kind,
        format!("mixup({},{})", a.source_id, b.source_id),
    ))
}

/// Mirror the image left-right and swap the per-lung scores.
pub fn hflip(a: &CxrSample) -> CxrSample {
    CxrSample {
        image: a.image.flipped_horizontally(),
        score_total: a.score_total,
        score_left: a.score_right,
        score_right: a.score_left,
        kind: a.kind,
        source_id: a.source_id.clone(),
    }
}
