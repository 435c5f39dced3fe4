//! Training loop.
//!
//! One epoch shuffles the (optionally lung-replacement-expanded) training
//! set, walks it in batches, optionally CutMixes every batch member with a
//! shuffled partner from the same batch, and takes one optimiser step per
//! batch on the summed loss between predicted and true total scores.

mod loss;
mod optim;

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use loss::{l1_loss, LossKind};
pub use optim::{Optimizer, OptimizerKind};

use crate::augmentation::{expand_dataset, mix_scores, CutBox, CutMixParams};
use crate::data::CxrSample;
use crate::error::{Error, Result};
use crate::evaluation::{mae, pearson};
use crate::model::{backward, forward, outputs_to_predictions, predict_chunked, VitWeights};
use crate::seeds;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default, deserialize_with = "name_or_full")]
    pub loss: LossKind,
    #[serde(default, deserialize_with = "name_or_full")]
    pub optimizer: OptimizerKind,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub online_cutmix: bool,
    #[serde(default)]
    pub cutmix: CutMixParams,
    #[serde(default = "yes")]
    pub offline_replacement: bool,
    #[serde(default = "yes")]
    pub shuffle: bool,
    /// Record wall-clock seconds per epoch. Off by default so the trace is
    /// byte-reproducible; the column then holds zeros.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default = "d_eval_batch")]
    pub eval_batch_size: usize,
}

/// Accept `"adam"` as shorthand for `{"adam": {}}` so variants with all
/// fields defaulted can be named directly.
fn name_or_full<'de, D, T>(d: D) -> std::result::Result<T, D::Error>
where
    D: serde::Deserializer<'de>,
    T: serde::de::DeserializeOwned,
{
    use serde::de::Error as _;
    let v = serde_json::Value::deserialize(d)?;
    match T::deserialize(&v) {
        Ok(t) => Ok(t),
        Err(first) => match &v {
            serde_json::Value::String(name) => {
                T::deserialize(serde_json::json!({ name.as_str(): {} })).map_err(|_| D::Error::custom(first))
            }
            _ => Err(D::Error::custom(first)),
        },
    }
}

fn d_lr() -> f64 {
    1e-3
}
fn d_batch() -> usize {
    32
}
fn d_epochs() -> usize {
    60
}
fn d_eval_batch() -> usize {
    64
}
fn yes() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::L1,
            optimizer: OptimizerKind::sgd(),
            learning_rate: d_lr(),
            batch_size: d_batch(),
            epochs: d_epochs(),
            seed: 0,
            online_cutmix: true,
            cutmix: CutMixParams::default(),
            offline_replacement: true,
            shuffle: true,
            record_wall_time: false,
            eval_batch_size: d_eval_batch(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config(
                "batch_size, epochs and eval_batch_size must be at least 1".into(),
            ));
        }
        self.loss.validate()?;
        self.optimizer.validate()?;
        if self.online_cutmix {
            self.cutmix.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// Metrics for one completed epoch. Validation fields are `None` without a
/// validation set, or when the correlation is undefined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample loss over the epoch.
    pub train_loss: f64,
    pub val_mae: Option<f64>,
    pub val_pc: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
}

impl TrainTrace {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_mae,val_pc,seconds";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch,
                e.train_loss,
                opt(e.val_mae),
                opt(e.val_pc),
                e.seconds
            ));
        }
        s
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub weights: VitWeights<f32>,
    /// Lowest validation MAE seen, with its epoch; `None` without a validation set.
    pub best: Option<(usize, VitWeights<f32>)>,
    pub trace: TrainTrace,
}

impl TrainOutcome {
    pub fn best_or_final(&self) -> &VitWeights<f32> {
        self.best.as_ref().map(|(_, w)| w).unwrap_or(&self.weights)
    }
}

pub fn train(
    weights: VitWeights<f32>,
    train_set: &[CxrSample],
    val_set: &[CxrSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_progress(weights, train_set, val_set, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_progress(
    mut weights: VitWeights<f32>,
    train_set: &[CxrSample],
    val_set: &[CxrSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    let expanded;
    let samples: &[CxrSample] = if cfg.offline_replacement {
        expanded = expand_dataset(train_set, seeds::derive(cfg.seed, "replacement", 0))?;
        &expanded
    } else {
        train_set
    };
    // Reject shape problems before the first step.
    for (i, img) in samples.iter().map(|s| &s.image).enumerate() {
        let want = (
            weights.config.image_height,
            weights.config.image_width,
            weights.config.channels,
        );
        if img.dims() != want {
            return Err(Error::Shape(format!(
                "training sample {i} is {:?}, model expects {want:?}",
                img.dims()
            )));
        }
    }

    let cfgm = weights.config.clone();
    let (h, w, c) = (cfgm.image_height, cfgm.image_width, cfgm.channels);
    let img_len = cfgm.image_len();
    let cutmix_seed = seeds::derive(cfg.seed, "cutmix", cfg.cutmix.rng_seed);

    let mut grads = weights.zeros_like();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut trace = TrainTrace::default();
    let mut best: Option<(usize, f64, VitWeights<f32>)> = None;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step: u64 = 0;

    for epoch in 0..cfg.epochs {
        let started = cfg.record_wall_time.then(Instant::now);
        if cfg.shuffle {
            order.sort_unstable();
            order.shuffle(&mut seeds::rng(cfg.seed, "epoch-order", epoch as u64));
        }
        let mut epoch_loss = 0.0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let bs = batch.len();
            let mut input = Vec::with_capacity(bs * img_len);
            let mut targets: Vec<f64> = Vec::with_capacity(bs);
            for &i in batch {
                input.extend_from_slice(samples[i].image.data());
                targets.push(samples[i].score_total);
            }
            if cfg.online_cutmix {
                let mut rng = seeds::rng(cutmix_seed, "batch", step);
                let mut partners: Vec<usize> = (0..bs).collect();
                partners.shuffle(&mut rng);
                for (slot, &pj) in partners.iter().enumerate() {
                    let partner = &samples[batch[pj]];
                    let region = CutBox::draw(h, w, &cfg.cutmix, &mut rng);
                    let dst = &mut input[slot * img_len..(slot + 1) * img_len];
                    region.paste(dst, partner.image.data(), w, c);
                    let lambda = region.retained_fraction(h, w);
                    targets[slot] = mix_scores(lambda, targets[slot], partner.score_total);
                }
            }

            let cache = forward(&weights, &input, bs)?;
            let preds = outputs_to_predictions(cache.outputs());
            let mut batch_loss = 0.0;
            let mut d_out = Vec::with_capacity(2 * bs);
            for (p, &y) in preds.iter().zip(&targets) {
                let r = p.p_total - y;
                batch_loss += cfg.loss.value(r);
                let g = cfg.loss.derivative(r) as f32;
                d_out.extend([g, g]);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    learning_rate: cfg.learning_rate,
                    detail: format!("batch loss {batch_loss}"),
                });
            }
            epoch_loss += batch_loss;

            grads.fill_zero();
            backward(&weights, &cache, &d_out, &mut grads)?;
            let g = grads.tensors();
            opt.step(&mut weights.tensors_mut(), &g);
            step += 1;
        }

        let (val_mae, val_pc) = if val_set.is_empty() {
            (None, None)
        } else {
            let imgs: Vec<_> = val_set.iter().map(|s| &s.image).collect();
            let preds = predict_chunked(&weights, &imgs, cfg.eval_batch_size)?;
            let p: Vec<f64> = preds.iter().map(|p| p.p_total).collect();
            let t: Vec<f64> = val_set.iter().map(|s| s.score_total).collect();
            (Some(mae(&p, &t)?), pearson(&p, &t).ok())
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: epoch_loss / samples.len() as f64,
            val_mae,
            val_pc,
            seconds: started.map_or(0.0, |t| t.elapsed().as_secs_f64()),
        };
        if let Some(m) = val_mae {
            if best.as_ref().map_or(true, |(_, b, _)| m < *b) {
                best = Some((epoch + 1, m, weights.clone()));
            }
        }
        on_epoch(&record);
        trace.epochs.push(record);
    }

    Ok(TrainOutcome {
        weights,
        best: best.map(|(e, _, w)| (e, w)),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{preprocess_all, synth_dataset, PreprocessConfig};
    use crate::model::VitConfig;

    fn tiny_model() -> VitConfig {
        VitConfig {
            depth: 1,
            embed_dim: 16,
            num_heads: 2,
            mlp_hidden: 32,
            fc1_width: 8,
            ..VitConfig::toy(16)
        }
    }

    fn data(n: usize) -> Vec<CxrSample> {
        let raw = synth_dataset(n, (16, 16), 2).unwrap();
        preprocess_all(&raw, &PreprocessConfig::new(16, 16)).unwrap()
    }

    #[test]
    fn zero_lr_keeps_weights_and_loss() {
        let w = VitWeights::<f32>::init(&tiny_model(), 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            batch_size: 4,
            online_cutmix: false,
            offline_replacement: false,
            ..TrainConfig::default()
        };
        let set = data(10);
        let out = train(w.clone(), &set, &set[..4], &cfg).unwrap();
        assert_eq!(out.weights, w);
        let l = out.trace.losses();
        assert!(l.iter().all(|&x| x == l[0]), "{l:?}");
    }

    #[test]
    fn deterministic_trace() {
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            record_wall_time: false,
            ..TrainConfig::default()
        };
        let set = data(8);
        let run = || {
            let w = VitWeights::<f32>::init(&tiny_model(), 4).unwrap();
            train(w, &set, &set[..4], &cfg).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.trace.epochs.len(), 2);
        assert!(a.best.is_some());
    }

    #[test]
    fn rejects_bad_inputs() {
        let w = VitWeights::<f32>::init(&tiny_model(), 1).unwrap();
        let set = data(4);
        assert!(train(w.clone(), &[], &[], &TrainConfig::default()).is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(w.clone(), &set, &[], &bad), Err(Error::Config(_))));
        let wrong = preprocess_all(&synth_dataset(2, (8, 8), 1).unwrap(), &PreprocessConfig::new(8, 8)).unwrap();
        let cfg = TrainConfig {
            offline_replacement: false,
            ..TrainConfig::default()
        };
        assert!(matches!(train(w, &wrong, &[], &cfg), Err(Error::Shape(_))));
    }

    #[test]
    fn diverging_run_reports_context() {
        let w = VitWeights::<f32>::init(&tiny_model(), 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e30,
            loss: LossKind::Mse,
            optimizer: OptimizerKind::Sgd {
                momentum: 0.0,
                weight_decay: 0.0,
            },
            epochs: 5,
            batch_size: 2,
            offline_replacement: false,
            online_cutmix: false,
            ..TrainConfig::default()
        };
        match train(w, &data(4), &[], &cfg) {
            Err(Error::NonFiniteLoss { learning_rate, .. }) => assert_eq!(learning_rate, 1e30),
            other => panic!("expected non-finite loss, got {other:?}"),
        }
    }

    #[test]
    fn trace_csv_layout() {
        let t = TrainTrace {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 2.5,
                val_mae: Some(1.0),
                val_pc: None,
                seconds: 0.0,
            }],
        };
        assert_eq!(t.to_csv(), "epoch,train_loss,val_mae,val_pc,seconds\n1,2.5,1,,0\n");
    }

    #[test]
    fn optimizer_and_loss_shorthand() {
        let cfg: TrainConfig =
            serde_json::from_str(r#"{"optimizer": "adamw", "loss": "mse"}"#).unwrap();
        assert_eq!(cfg.optimizer, OptimizerKind::adamw());
        assert_eq!(cfg.loss, LossKind::Mse);
        let cfg: TrainConfig =
            serde_json::from_str(r#"{"optimizer": {"sgd": {"momentum": 0.5}}, "loss": {"huber": {"delta": 2.0}}}"#)
                .unwrap();
        assert_eq!(cfg.optimizer, OptimizerKind::Sgd { momentum: 0.5, weight_decay: 0.0 });
        assert_eq!(cfg.loss, LossKind::Huber { delta: 2.0 });
        assert!(serde_json::from_str::<TrainConfig>(r#"{"optimizer": "lbfgs"}"#).is_err());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"loss": "huber"}"#).is_err());
    }
}
