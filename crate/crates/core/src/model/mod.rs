//! ViT backbone and two-layer regression head.
//!
//! Forward pass:
//! - patch embedding `z0 = [CLS; x_p E] + E_pos`,
//! - `depth` pre-norm blocks `z' = MSA(LN(z)) + z`, `z = MLP(LN(z')) + z'`,
//! - final layer norm on the CLS token, then `FC2(act(FC1(cls)))` giving the
//!   left and right lung scores.

mod attention;
mod checkpoint;
mod config;
mod ops;
mod vit;
mod weights;

use serde::{Deserialize, Serialize};

pub use attention::{extract_attention, upsample_map, Aggregation, AttentionMap};
pub use checkpoint::{load_weights, read_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION};
pub use config::{HeadActivation, VitConfig};
pub use vit::{backward, forward, patchify, ForwardCache};
pub use weights::{tensor_specs, InitKind, LayerWeights, TensorSpec, VitWeights};

use crate::error::{Error, Result};
use crate::image::Image;

/// Per-lung outputs of the head and their sum. Outputs are not clamped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorePrediction {
    pub p_left: f64,
    pub p_right: f64,
    pub p_total: f64,
}

impl ScorePrediction {
    pub fn new(p_left: f64, p_right: f64) -> Self {
        ScorePrediction {
            p_left,
            p_right,
            p_total: p_left + p_right,
        }
    }

    /// Total clamped to `[lo, hi]` for display.
    pub fn clamped_total(&self, lo: f64, hi: f64) -> f64 {
        self.p_total.clamp(lo, hi)
    }
}

/// Concatenate images into one flat `B x H x W x C` buffer after checking
/// each against the model input shape.
pub fn stack_images(config: &VitConfig, images: &[&Image]) -> Result<Vec<f32>> {
    let want = (config.image_height, config.image_width, config.channels);
    let mut out = Vec::with_capacity(images.len() * config.image_len());
    for (i, img) in images.iter().enumerate() {
        if img.dims() != want {
            return Err(Error::Shape(format!(
                "image {i} is {:?}, model expects {want:?}",
                img.dims()
            )));
        }
        if img.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("image {i} contains non-finite values")));
        }
        out.extend_from_slice(img.data());
    }
    Ok(out)
}

pub(crate) fn outputs_to_predictions<T: crate::scalar::Scalar>(outputs: &[T]) -> Vec<ScorePrediction> {
    outputs
        .chunks_exact(2)
        .map(|o| ScorePrediction::new(o[0].as_f64(), o[1].as_f64()))
        .collect()
}

/// Score a batch of preprocessed images.
pub fn predict(weights: &VitWeights<f32>, images: &[&Image]) -> Result<Vec<ScorePrediction>> {
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let input = stack_images(&weights.config, images)?;
    let cache = forward(weights, &input, images.len())?;
    Ok(outputs_to_predictions(cache.outputs()))
}

/// [`predict`] over consecutive chunks of at most `batch_size` images.
pub fn predict_chunked(
    weights: &VitWeights<f32>,
    images: &[&Image],
    batch_size: usize,
) -> Result<Vec<ScorePrediction>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        out.extend(predict(weights, chunk)?);
    }
    Ok(out)
}
