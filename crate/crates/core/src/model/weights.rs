use rand_distr::{Distribution, Normal};

use super::config::VitConfig;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::seeds;

const INIT_STD: f64 = 0.02;

/// Parameters of one pre-norm encoder block. Linear weights are stored
/// `in x out` row-major so that `y = x W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<T> {
    pub ln1_scale: Vec<T>,
    pub ln1_shift: Vec<T>,
    pub wq: Vec<T>,
    pub bq: Vec<T>,
    pub wk: Vec<T>,
    pub bk: Vec<T>,
    pub wv: Vec<T>,
    pub bv: Vec<T>,
    pub wo: Vec<T>,
    pub bo: Vec<T>,
    pub ln2_scale: Vec<T>,
    pub ln2_shift: Vec<T>,
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

/// Every learnable tensor of the backbone and regression head.
#[derive(Clone, Debug, PartialEq)]
pub struct VitWeights<T = f32> {
    pub config: VitConfig,
    pub patch_proj: Vec<T>,
    pub pos_embed: Vec<T>,
    pub cls_token: Vec<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub ln_f_scale: Vec<T>,
    pub ln_f_shift: Vec<T>,
    pub fc1_w: Vec<T>,
    pub fc1_b: Vec<T>,
    pub fc2_w: Vec<T>,
    pub fc2_b: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    Normal,
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: InitKind,
}

impl TensorSpec {
    fn new(name: impl Into<String>, shape: &[usize], init: InitKind) -> Self {
        TensorSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Names and shapes of every parameter tensor, in storage order. This order
/// is also the on-disk order of the checkpoint container.
pub fn tensor_specs(config: &VitConfig) -> Vec<TensorSpec> {
    use InitKind::*;
    let d = config.embed_dim;
    let m = config.mlp_hidden;
    let f = config.fc1_width;
    let mut specs = vec![
        TensorSpec::new("patch_embed.proj", &[config.patch_dim(), d], Normal),
        TensorSpec::new("pos_embed", &[config.num_tokens(), d], Normal),
        TensorSpec::new("cls_token", &[d], Normal),
    ];
    for i in 0..config.depth {
        let p = |s: &str| format!("layers.{i}.{s}");
        specs.extend([
            TensorSpec::new(p("ln1.scale"), &[d], Ones),
            TensorSpec::new(p("ln1.shift"), &[d], Zeros),
            TensorSpec::new(p("attn.q.weight"), &[d, d], Normal),
            TensorSpec::new(p("attn.q.bias"), &[d], Zeros),
            TensorSpec::new(p("attn.k.weight"), &[d, d], Normal),
            TensorSpec::new(p("attn.k.bias"), &[d], Zeros),
            TensorSpec::new(p("attn.v.weight"), &[d, d], Normal),
            TensorSpec::new(p("attn.v.bias"), &[d], Zeros),
            TensorSpec::new(p("attn.out.weight"), &[d, d], Normal),
            TensorSpec::new(p("attn.out.bias"), &[d], Zeros),
            TensorSpec::new(p("ln2.scale"), &[d], Ones),
            TensorSpec::new(p("ln2.shift"), &[d], Zeros),
            TensorSpec::new(p("mlp.fc1.weight"), &[d, m], Normal),
            TensorSpec::new(p("mlp.fc1.bias"), &[m], Zeros),
            TensorSpec::new(p("mlp.fc2.weight"), &[m, d], Normal),
            TensorSpec::new(p("mlp.fc2.bias"), &[d], Zeros),
        ]);
    }
    specs.extend([
        TensorSpec::new("norm.scale", &[d], Ones),
        TensorSpec::new("norm.shift", &[d], Zeros),
        TensorSpec::new("head.fc1.weight", &[d, f], Normal),
        TensorSpec::new("head.fc1.bias", &[f], Zeros),
        TensorSpec::new("head.fc2.weight", &[f, config.num_outputs], Normal),
        TensorSpec::new("head.fc2.bias", &[config.num_outputs], Zeros),
    ]);
    specs
}

impl<T: Scalar> VitWeights<T> {
    /// Build weights from tensors given in `tensor_specs` order.
    pub fn from_tensors(config: VitConfig, tensors: Vec<Vec<T>>) -> Result<Self> {
        config.validate()?;
        let specs = tensor_specs(&config);
        if tensors.len() != specs.len() {
            return Err(crate::Error::Shape(format!(
                "expected {} tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        for (spec, t) in specs.iter().zip(&tensors) {
            if spec.len() != t.len() {
                return Err(crate::Error::Shape(format!(
                    "tensor {} holds {} values, expected {:?}",
                    spec.name,
                    t.len(),
                    spec.shape
                )));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("count checked");
        let patch_proj = next();
        let pos_embed = next();
        let cls_token = next();
        let layers = (0..config.depth)
            .map(|_| LayerWeights {
                ln1_scale: next(),
                ln1_shift: next(),
                wq: next(),
                bq: next(),
                wk: next(),
                bk: next(),
                wv: next(),
                bv: next(),
                wo: next(),
                bo: next(),
                ln2_scale: next(),
                ln2_shift: next(),
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
            })
            .collect();
        Ok(VitWeights {
            patch_proj,
            pos_embed,
            cls_token,
            layers,
            ln_f_scale: next(),
            ln_f_shift: next(),
            fc1_w: next(),
            fc1_b: next(),
            fc2_w: next(),
            fc2_b: next(),
            config,
        })
    }

    /// Deterministic initialisation: truncated normal (std 0.02, cut at two
    /// standard deviations) for projections, CLS token and position table;
    /// zeros for biases; unit scale and zero shift for layer norms.
    pub fn init(config: &VitConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let tensors = tensor_specs(config)
            .iter()
            .enumerate()
            .map(|(i, spec)| match spec.init {
                InitKind::Zeros => vec![T::zero(); spec.len()],
                InitKind::Ones => vec![T::one(); spec.len()],
                InitKind::Normal => {
                    let mut rng = seeds::rng(seed, "init", i as u64);
                    (0..spec.len())
                        .map(|_| loop {
                            let v: f64 = normal.sample(&mut rng);
                            if v.abs() <= 2.0 * INIT_STD {
                                break T::from_f64_lossy(v);
                            }
                        })
                        .collect()
                }
            })
            .collect();
        Self::from_tensors(config.clone(), tensors)
    }

    /// Same-shaped tensors filled with zeros (gradient and optimiser buffers).
    pub fn zeros_like(&self) -> Self {
        let tensors = self.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect();
        Self::from_tensors(self.config.clone(), tensors).expect("shapes copied")
    }

    pub fn tensors(&self) -> Vec<&Vec<T>> {
        let mut out = vec![&self.patch_proj, &self.pos_embed, &self.cls_token];
        for l in &self.layers {
            out.extend([
                &l.ln1_scale, &l.ln1_shift, &l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo,
                &l.ln2_scale, &l.ln2_shift, &l.w1, &l.b1, &l.w2, &l.b2,
            ]);
        }
        out.extend([
            &self.ln_f_scale,
            &self.ln_f_shift,
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = vec![&mut self.patch_proj, &mut self.pos_embed, &mut self.cls_token];
        for l in &mut self.layers {
            out.extend([
                &mut l.ln1_scale,
                &mut l.ln1_shift,
                &mut l.wq,
                &mut l.bq,
                &mut l.wk,
                &mut l.bk,
                &mut l.wv,
                &mut l.bv,
                &mut l.wo,
                &mut l.bo,
                &mut l.ln2_scale,
                &mut l.ln2_shift,
                &mut l.w1,
                &mut l.b1,
                &mut l.w2,
                &mut l.b2,
            ]);
        }
        out.extend([
            &mut self.ln_f_scale,
            &mut self.ln_f_shift,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
        ]);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Element-type conversion, used to run f32 weights through the f64 path.
    pub fn cast<U: Scalar>(&self) -> VitWeights<U> {
        let tensors = self
            .tensors()
            .iter()
            .map(|t| t.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect())
            .collect();
        VitWeights::from_tensors(self.config.clone(), tensors).expect("shapes copied")
    }
}
