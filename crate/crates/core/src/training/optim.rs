//! First-order optimisers with PyTorch update rules. Parameters are `f32`;
//! optimiser state and the update arithmetic are `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd {
        #[serde(default = "d_momentum")]
        momentum: f64,
        #[serde(default)]
        weight_decay: f64,
    },
    Adam {
        #[serde(default = "d_beta1")]
        beta1: f64,
        #[serde(default = "d_beta2")]
        beta2: f64,
        #[serde(default = "d_eps")]
        eps: f64,
        #[serde(default)]
        weight_decay: f64,
    },
    #[serde(rename = "adamw")]
    AdamW {
        #[serde(default = "d_beta1")]
        beta1: f64,
        #[serde(default = "d_beta2")]
        beta2: f64,
        #[serde(default = "d_eps")]
        eps: f64,
        #[serde(default = "d_adamw_decay")]
        weight_decay: f64,
    },
    Adadelta {
        #[serde(default = "d_rho")]
        rho: f64,
        #[serde(default = "d_adadelta_eps")]
        eps: f64,
        #[serde(default)]
        weight_decay: f64,
    },
    Rmsprop {
        #[serde(default = "d_alpha")]
        alpha: f64,
        #[serde(default = "d_eps")]
        eps: f64,
        #[serde(default)]
        momentum: f64,
        #[serde(default)]
        weight_decay: f64,
    },
}

fn d_momentum() -> f64 {
    0.9
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}
fn d_adamw_decay() -> f64 {
    0.01
}
fn d_rho() -> f64 {
    0.9
}
fn d_adadelta_eps() -> f64 {
    1e-6
}
fn d_alpha() -> f64 {
    0.99
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::sgd()
    }
}

impl OptimizerKind {
    pub fn sgd() -> Self {
        OptimizerKind::Sgd {
            momentum: d_momentum(),
            weight_decay: 0.0,
        }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: d_beta1(),
            beta2: d_beta2(),
            eps: d_eps(),
            weight_decay: 0.0,
        }
    }

    pub fn adamw() -> Self {
        OptimizerKind::AdamW {
            beta1: d_beta1(),
            beta2: d_beta2(),
            eps: d_eps(),
            weight_decay: d_adamw_decay(),
        }
    }

    pub fn adadelta() -> Self {
        OptimizerKind::Adadelta {
            rho: d_rho(),
            eps: d_adadelta_eps(),
            weight_decay: 0.0,
        }
    }

    pub fn rmsprop() -> Self {
        OptimizerKind::Rmsprop {
            alpha: d_alpha(),
            eps: d_eps(),
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be in [0, 1), got {v}")))
            }
        };
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be non-negative, got {v}")))
            }
        };
        match *self {
            OptimizerKind::Sgd { momentum, weight_decay } => {
                unit("momentum", momentum)?;
                nonneg("weight_decay", weight_decay)
            }
            OptimizerKind::Adam { beta1, beta2, eps, weight_decay }
            | OptimizerKind::AdamW { beta1, beta2, eps, weight_decay } => {
                unit("beta1", beta1)?;
                unit("beta2", beta2)?;
                nonneg("eps", eps)?;
                nonneg("weight_decay", weight_decay)
            }
            OptimizerKind::Adadelta { rho, eps, weight_decay } => {
                unit("rho", rho)?;
                nonneg("eps", eps)?;
                nonneg("weight_decay", weight_decay)
            }
            OptimizerKind::Rmsprop { alpha, eps, momentum, weight_decay } => {
                unit("alpha", alpha)?;
                unit("momentum", momentum)?;
                nonneg("eps", eps)?;
                nonneg("weight_decay", weight_decay)
            }
        }
    }
}

/// Optimiser with per-tensor state, tensors identified by position.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    slot_a: Vec<Vec<f64>>,
    slot_b: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Optimizer {
            kind,
            lr: learning_rate,
            step: 0,
            slot_a: Vec::new(),
            slot_b: Vec::new(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update. `params` and `grads` must keep the same tensor order
    /// and sizes across calls.
    pub fn step(&mut self, params: &mut [&mut Vec<f32>], grads: &[&Vec<f32>]) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        if self.slot_a.is_empty() {
            self.slot_a = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.slot_b = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        self.step += 1;
        let lr = self.lr;
        let t = self.step as f64;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(p.len(), g.len(), "tensor {i} size mismatch");
            let a = &mut self.slot_a[i];
            let b = &mut self.slot_b[i];
            match self.kind {
                OptimizerKind::Sgd { momentum, weight_decay } => {
                    for j in 0..p.len() {
                        let w = p[j] as f64;
                        let grad = g[j] as f64 + weight_decay * w;
                        let dir = if momentum > 0.0 {
                            a[j] = momentum * a[j] + grad;
                            a[j]
                        } else {
                            grad
                        };
                        p[j] = (w - lr * dir) as f32;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps, weight_decay } => {
                    let (c1, c2) = (1.0 - beta1.powf(t), 1.0 - beta2.powf(t));
                    for j in 0..p.len() {
                        let w = p[j] as f64;
                        let grad = g[j] as f64 + weight_decay * w;
                        a[j] = beta1 * a[j] + (1.0 - beta1) * grad;
                        b[j] = beta2 * b[j] + (1.0 - beta2) * grad * grad;
                        let update = (a[j] / c1) / ((b[j] / c2).sqrt() + eps);
                        p[j] = (w - lr * update) as f32;
                    }
                }
                OptimizerKind::AdamW { beta1, beta2, eps, weight_decay } => {
                    let (c1, c2) = (1.0 - beta1.powf(t), 1.0 - beta2.powf(t));
                    for j in 0..p.len() {
                        let w = p[j] as f64 * (1.0 - lr * weight_decay);
                        let grad = g[j] as f64;
                        a[j] = beta1 * a[j] + (1.0 - beta1) * grad;
                        b[j] = beta2 * b[j] + (1.0 - beta2) * grad * grad;
                        let update = (a[j] / c1) / ((b[j] / c2).sqrt() + eps);
                        p[j] = (w - lr * update) as f32;
                    }
                }
                OptimizerKind::Adadelta { rho, eps, weight_decay } => {
                    for j in 0..p.len() {
                        let w = p[j] as f64;
                        let grad = g[j] as f64 + weight_decay * w;
                        a[j] = rho * a[j] + (1.0 - rho) * grad * grad;
                        let delta = (b[j] + eps).sqrt() / (a[j] + eps).sqrt() * grad;
                        b[j] = rho * b[j] + (1.0 - rho) * delta * delta;
                        p[j] = (w - lr * delta) as f32;
                    }
                }
                OptimizerKind::Rmsprop { alpha, eps, momentum, weight_decay } => {
                    for j in 0..p.len() {
                        let w = p[j] as f64;
                        let grad = g[j] as f64 + weight_decay * w;
                        a[j] = alpha * a[j] + (1.0 - alpha) * grad * grad;
                        let scaled = grad / (a[j].sqrt() + eps);
                        let dir = if momentum > 0.0 {
                            b[j] = momentum * b[j] + scaled;
                            b[j]
                        } else {
                            scaled
                        };
                        p[j] = (w - lr * dir) as f32;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Gradient of `sum_i 0.5 (w x_i + b - y_i)^2` for a scalar linear model.
    fn linear_grads(w: f32, b: f32, xs: &[f32], ys: &[f32]) -> (f32, f32) {
        xs.iter().zip(ys).fold((0.0, 0.0), |(gw, gb), (&x, &y)| {
            let r = w * x + b - y;
            (gw + r * x, gb + r)
        })
    }

    #[test]
    fn sgd_matches_hand_steps() {
        let (xs, ys) = ([1.0f32, 2.0], [3.0f32, 5.0]);
        let mut w = vec![0.5f32];
        let mut b = vec![-0.25f32];
        let mut opt = Optimizer::new(OptimizerKind::sgd(), 0.1);

        let (gw1, gb1) = linear_grads(w[0], b[0], &xs, &ys);
        opt.step(&mut [&mut w, &mut b], &[&vec![gw1], &vec![gb1]]);
        // First step: buffer = g.
        assert_eq!(w[0], (0.5f64 - 0.1 * gw1 as f64) as f32);
        assert_eq!(b[0], (-0.25f64 - 0.1 * gb1 as f64) as f32);

        let (w1, b1) = (w[0], b[0]);
        let (gw2, gb2) = linear_grads(w1, b1, &xs, &ys);
        opt.step(&mut [&mut w, &mut b], &[&vec![gw2], &vec![gb2]]);
        let buf_w = 0.9 * gw1 as f64 + gw2 as f64;
        let buf_b = 0.9 * gb1 as f64 + gb2 as f64;
        assert_eq!(w[0], (w1 as f64 - 0.1 * buf_w) as f32);
        assert_eq!(b[0], (b1 as f64 - 0.1 * buf_b) as f32);
    }

    #[test]
    fn sgd_weight_decay() {
        let mut p = vec![2.0f32];
        let mut opt = Optimizer::new(
            OptimizerKind::Sgd {
                momentum: 0.0,
                weight_decay: 0.5,
            },
            0.1,
        );
        opt.step(&mut [&mut p], &[&vec![1.0]]);
        assert!((p[0] - (2.0 - 0.1 * (1.0 + 1.0))).abs() < 1e-7);
    }

    #[test]
    fn adam_first_step_is_lr_sign() {
        // Bias correction makes the first Adam step lr * g / (|g| + eps).
        let mut p = vec![1.0f32, -1.0];
        let mut opt = Optimizer::new(OptimizerKind::adam(), 0.01);
        opt.step(&mut [&mut p], &[&vec![3.0, -0.2]]);
        assert!((p[0] - 0.99).abs() < 1e-6);
        assert!((p[1] + 0.99).abs() < 1e-6);
    }

    #[test]
    fn adamw_decouples_decay() {
        let mut p = vec![1.0f32];
        let mut opt = Optimizer::new(
            OptimizerKind::AdamW {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                weight_decay: 0.1,
            },
            0.1,
        );
        opt.step(&mut [&mut p], &[&vec![0.0]]);
        assert!((p[0] - 0.99).abs() < 1e-7);
    }

    #[test]
    fn all_kinds_descend_a_quadratic() {
        for kind in [
            OptimizerKind::sgd(),
            OptimizerKind::adam(),
            OptimizerKind::adamw(),
            OptimizerKind::adadelta(),
            OptimizerKind::rmsprop(),
        ] {
            kind.validate().unwrap();
            let lr = if matches!(kind, OptimizerKind::Adadelta { .. }) { 1.0 } else { 0.01 };
            let mut p = vec![3.0f32, -2.0];
            let mut opt = Optimizer::new(kind, lr);
            let f = |p: &[f32]| p.iter().map(|v| v * v).sum::<f32>();
            let start = f(&p);
            for _ in 0..50 {
                let g: Vec<f32> = p.iter().map(|v| 2.0 * v).collect();
                opt.step(&mut [&mut p], &[&g]);
            }
            assert!(f(&p) < start, "{kind:?}");
        }
    }

    #[test]
    fn zero_lr_changes_nothing() {
        for kind in [OptimizerKind::sgd(), OptimizerKind::adam(), OptimizerKind::rmsprop()] {
            let mut p = vec![0.3f32, -0.7];
            let mut opt = Optimizer::new(kind, 0.0);
            opt.step(&mut [&mut p], &[&vec![1.0, 2.0]]);
            assert_eq!(p, vec![0.3f32, -0.7]);
        }
    }

    #[test]
    fn validation() {
        assert!(OptimizerKind::Sgd { momentum: 1.0, weight_decay: 0.0 }.validate().is_err());
        assert!(OptimizerKind::Rmsprop { alpha: 0.99, eps: -1.0, momentum: 0.0, weight_decay: 0.0 }
            .validate()
            .is_err());
    }

    #[test]
    fn json_defaults() {
        let k: OptimizerKind = serde_json::from_str(r#"{"sgd": {}}"#).unwrap();
        assert_eq!(k, OptimizerKind::sgd());
        let k: OptimizerKind = serde_json::from_str(r#"{"adamw": {"weight_decay": 0.05}}"#).unwrap();
        assert!(matches!(k, OptimizerKind::AdamW { weight_decay, .. } if weight_decay == 0.05));
    }
}
