use serde::{Deserialize, Serialize};

use super::sample::CxrSample;
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    pub target_height: usize,
    pub target_width: usize,
    #[serde(default = "default_mean")]
    pub normalize_mean: Vec<f64>,
    #[serde(default = "default_std")]
    pub normalize_std: Vec<f64>,
}

fn default_mean() -> Vec<f64> {
    vec![0.5; 3]
}

fn default_std() -> Vec<f64> {
    vec![0.25; 3]
}

impl PreprocessConfig {
    pub fn new(target_height: usize, target_width: usize) -> Self {
        PreprocessConfig {
            target_height,
            target_width,
            normalize_mean: default_mean(),
            normalize_std: default_std(),
        }
    }

    pub fn channels(&self) -> usize {
        self.normalize_mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_height == 0 || self.target_width == 0 {
            return Err(Error::Config("preprocess target size must be positive".into()));
        }
        if self.normalize_mean.is_empty() || self.normalize_mean.len() != self.normalize_std.len() {
            return Err(Error::Config(
                "normalize_mean and normalize_std need one entry per channel".into(),
            ));
        }
        if self.normalize_std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("normalize_std entries must be positive".into()));
        }
        Ok(())
    }
}

/// Resize to the target size, replicate grayscale to the configured channel
/// count, and standardise each channel.
pub fn preprocess(image: &Image, cfg: &PreprocessConfig) -> Result<Image> {
    cfg.validate()?;
    let channels = cfg.channels();
    let resized = image.resize_bilinear(cfg.target_height, cfg.target_width);
    let mut out = resized
        .replicate_channels(channels)
        .map_err(|e| Error::ingest(None, e.to_string()))?;
    let mean: Vec<f32> = cfg.normalize_mean.iter().map(|&m| m as f32).collect();
    let inv_std: Vec<f32> = cfg.normalize_std.iter().map(|&s| (1.0 / s) as f32).collect();
    for px in out.data_mut().chunks_exact_mut(channels) {
        for (c, v) in px.iter_mut().enumerate() {
            *v = (*v - mean[c]) * inv_std[c];
        }
    }
    Ok(out)
}

/// Samples with their images replaced by model-ready tensors.
pub fn preprocess_all(samples: &[CxrSample], cfg: &PreprocessConfig) -> Result<Vec<CxrSample>> {
    samples
        .iter()
        .map(|s| {
            Ok(CxrSample {
                image: preprocess(&s.image, cfg)?,
                ..s.clone()
            })
        })
        .collect()
}
