//! Batch losses on total scores. All reductions are sums over the batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Absolute error.
    #[default]
    L1,
    /// Squared error.
    Mse,
    /// `0.5 r^2 / beta` inside `|r| < beta`, `|r| - 0.5 beta` outside.
    SmoothL1 { beta: f64 },
    /// `0.5 r^2` inside `|r| <= delta`, `delta (|r| - 0.5 delta)` outside.
    Huber { delta: f64 },
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::SmoothL1 { beta: k } | LossKind::Huber { delta: k } if !(k > 0.0) => Err(
                Error::Config(format!("loss threshold must be positive, got {k}")),
            ),
            _ => Ok(()),
        }
    }

    /// Loss of a single residual `r = prediction - truth`.
    pub fn value(&self, r: f64) -> f64 {
        let a = r.abs();
        match *self {
            LossKind::L1 => a,
            LossKind::Mse => r * r,
            LossKind::SmoothL1 { beta } => {
                if a < beta {
                    0.5 * r * r / beta
                } else {
                    a - 0.5 * beta
                }
            }
            LossKind::Huber { delta } => {
                if a <= delta {
                    0.5 * r * r
                } else {
                    delta * (a - 0.5 * delta)
                }
            }
        }
    }

    /// Derivative with respect to the prediction. The L1 subgradient at zero is zero.
    pub fn derivative(&self, r: f64) -> f64 {
        let sign = if r > 0.0 {
            1.0
        } else if r < 0.0 {
            -1.0
        } else {
            0.0
        };
        match *self {
            LossKind::L1 => sign,
            LossKind::Mse => 2.0 * r,
            LossKind::SmoothL1 { beta } => {
                if r.abs() < beta {
                    r / beta
                } else {
                    sign
                }
            }
            LossKind::Huber { delta } => {
                if r.abs() <= delta {
                    r
                } else {
                    delta * sign
                }
            }
        }
    }

    /// Summed loss over a batch.
    pub fn batch(&self, pred: &[f64], truth: &[f64]) -> Result<f64> {
        check_lengths(pred, truth)?;
        Ok(pred.iter().zip(truth).map(|(p, t)| self.value(p - t)).sum())
    }
}

fn check_lengths(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Argument(format!(
            "loss needs equal non-empty inputs, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// `sum_i |pred_i - truth_i|`.
pub fn l1_loss(pred: &[f64], truth: &[f64]) -> Result<f64> {
    LossKind::L1.batch(pred, truth)
}
