//! CLS-to-patch attention maps.

use serde::{Deserialize, Serialize};

use super::vit::forward;
use super::weights::VitWeights;
use super::stack_images;
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean over heads of the requested layer.
    MeanHeads,
    /// One head of the requested layer.
    SingleHead(usize),
    /// Head-averaged attention with identity residual, multiplied through
    /// layers `0..=layer`.
    Rollout,
}

/// CLS-row attention reshaped to the patch grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols` weights.
    pub grid: Vec<f64>,
    /// Weight the CLS token puts on itself; `grid` sums to `1 - cls_weight`.
    pub cls_weight: f64,
    pub layer_index: usize,
    pub aggregation: Aggregation,
}

impl AttentionMap {
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.grid[r * self.cols + c]
    }

    pub fn total(&self) -> f64 {
        self.grid.iter().sum()
    }

    /// Mass in the left `cols / 2` columns over the total grid mass.
    pub fn left_fraction(&self) -> f64 {
        let half = self.cols / 2;
        let left: f64 = (0..self.rows)
            .flat_map(|r| (0..half).map(move |c| (r, c)))
            .map(|(r, c)| self.at(r, c))
            .sum();
        left / self.total()
    }
}

pub fn extract_attention(
    weights: &VitWeights<f32>,
    image: &Image,
    layer: usize,
    aggregation: Aggregation,
) -> Result<AttentionMap> {
    let cfg = &weights.config;
    if layer >= cfg.depth {
        return Err(Error::Argument(format!(
            "layer {layer} out of range for depth {}",
            cfg.depth
        )));
    }
    if let Aggregation::SingleHead(h) = aggregation {
        if h >= cfg.num_heads {
            return Err(Error::Argument(format!(
                "head {h} out of range for {} heads",
                cfg.num_heads
            )));
        }
    }
    let input = stack_images(cfg, &[image])?;
    let cache = forward(weights, &input, 1)?;
    let t = cfg.num_tokens();
    let heads = cfg.num_heads;

    let head_mean = |l: usize| -> Vec<f64> {
        let probs = cache.attention(l);
        let mut m = vec![0.0; t * t];
        for h in 0..heads {
            for (acc, &p) in m.iter_mut().zip(&probs[h * t * t..(h + 1) * t * t]) {
                *acc += p as f64;
            }
        }
        m.iter_mut().for_each(|v| *v /= heads as f64);
        m
    };

    let cls_row: Vec<f64> = match aggregation {
        Aggregation::MeanHeads => head_mean(layer)[..t].to_vec(),
        Aggregation::SingleHead(h) => cache.attention(layer)[h * t * t..h * t * t + t]
            .iter()
            .map(|&p| p as f64)
            .collect(),
        Aggregation::Rollout => {
            let mut joint = identity(t);
            for l in 0..=layer {
                let mut a = head_mean(l);
                for i in 0..t {
                    for j in 0..t {
                        a[i * t + j] *= 0.5;
                    }
                    a[i * t + i] += 0.5;
                }
                joint = matmul_sq(&a, &joint, t);
            }
            joint[..t].to_vec()
        }
    };

    Ok(AttentionMap {
        rows: cfg.grid_height(),
        cols: cfg.grid_width(),
        grid: cls_row[1..].to_vec(),
        cls_weight: cls_row[0],
        layer_index: layer,
        aggregation,
    })
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn matmul_sq(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    crate::scalar::matmul(a, b, &mut c, n, n, n);
    c
}

/// Bilinear, corner-aligned upsampling of the grid to an `height x width`
/// single-channel heatmap. Output values stay within the grid's range.
pub fn upsample_map(map: &AttentionMap, height: usize, width: usize) -> Result<Image> {
    if map.rows == 0 || map.cols == 0 || map.grid.len() != map.rows * map.cols {
        return Err(Error::Argument("attention grid is empty or inconsistent".into()));
    }
    if height == 0 || width == 0 {
        return Err(Error::Argument("heatmap size must be positive".into()));
    }
    let grid = Image::new(
        map.rows,
        map.cols,
        1,
        map.grid.iter().map(|&v| v as f32).collect(),
    )?;
    Ok(grid.resize_bilinear_corners(height, width))
}
