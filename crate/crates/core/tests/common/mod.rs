//! Oracles shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vitreg::model::{backward, forward, tensor_specs, HeadActivation, VitConfig, VitWeights};

pub const FD_EPS: f64 = 1e-4;

pub fn grad_config(head_activation: HeadActivation) -> VitConfig {
    VitConfig {
        image_height: 8,
        image_width: 8,
        channels: 3,
        patch_size: 4,
        depth: 1,
        embed_dim: 8,
        num_heads: 2,
        mlp_hidden: 16,
        fc1_width: 16,
        num_outputs: 2,
        head_activation,
        layer_norm_eps: 1e-6,
    }
}

/// Seeded weights with larger spread than the default initialisation so
/// every path carries a visible gradient.
fn spread_weights(cfg: &VitConfig, seed: u64) -> VitWeights<f64> {
    let mut w = VitWeights::<f32>::init(cfg, seed).unwrap().cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in w.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.gen_range(-0.5..0.5);
        }
    }
    w
}

/// Sum over samples of `|p_total - y|`.
fn l1(w: &VitWeights<f64>, input: &[f64], targets: &[f64]) -> f64 {
    let cache = forward(w, input, targets.len()).unwrap();
    cache
        .outputs()
        .chunks(2)
        .zip(targets)
        .map(|(o, y)| (o[0] + o[1] - y).abs())
        .sum()
}

pub struct TensorGradError {
    pub name: String,
    pub relative: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

/// Per-tensor relative error `|g_a - g_fd| / max(|g_a|, |g_fd|)` of the L1
/// loss gradient against central differences.
pub fn gradient_errors(cfg: &VitConfig, batch: usize, seed: u64) -> Vec<TensorGradError> {
    let w = spread_weights(cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let input: Vec<f64> = (0..batch * cfg.image_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let cache = forward(&w, &input, batch).unwrap();
    // Targets far from the outputs keep every residual away from the kink.
    let targets: Vec<f64> = cache
        .outputs()
        .chunks(2)
        .enumerate()
        .map(|(i, o)| o[0] + o[1] + if i % 2 == 0 { 5.0 } else { -5.0 })
        .collect();
    let d_out: Vec<f64> = cache
        .outputs()
        .chunks(2)
        .zip(&targets)
        .flat_map(|(o, y)| {
            let s = (o[0] + o[1] - y).signum();
            [s, s]
        })
        .collect();
    let mut grads = w.zeros_like();
    backward(&w, &cache, &d_out, &mut grads).unwrap();

    let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().cloned().collect();
    let mut probe = w.clone();
    tensor_specs(cfg)
        .iter()
        .enumerate()
        .map(|(ti, spec)| {
            let mut numeric = vec![0.0; spec.len()];
            for (j, n) in numeric.iter_mut().enumerate() {
                let orig = probe.tensors()[ti][j];
                probe.tensors_mut()[ti][j] = orig + FD_EPS;
                let up = l1(&probe, &input, &targets);
                probe.tensors_mut()[ti][j] = orig - FD_EPS;
                let down = l1(&probe, &input, &targets);
                probe.tensors_mut()[ti][j] = orig;
                *n = (up - down) / (2.0 * FD_EPS);
            }
            let a = &analytic[ti];
            let diff = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nn = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
            TensorGradError {
                name: spec.name.clone(),
                relative: diff / na.max(nn).max(1e-7),
                analytic_norm: na,
                numeric_norm: nn,
            }
        })
        .collect()
}

pub fn naive_mae(p: &[f64], t: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        s += (p[i] - t[i]).abs();
    }
    s / p.len() as f64
}

pub fn naive_pearson(p: &[f64], t: &[f64]) -> f64 {
    let n = p.len() as f64;
    let mp = p.iter().sum::<f64>() / n;
    let mt = t.iter().sum::<f64>() / n;
    let (mut num, mut dp, mut dt) = (0.0, 0.0, 0.0);
    for i in 0..p.len() {
        num += (p[i] - mp) * (t[i] - mt);
        dp += (p[i] - mp) * (p[i] - mp);
        dt += (t[i] - mt) * (t[i] - mt);
    }
    num / (dp.sqrt() * dt.sqrt())
}
