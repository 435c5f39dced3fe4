//! Batched forward and backward passes.
//!
//! Activations are stored row-major with one row per token; sample `b`
//! occupies rows `b*T..(b+1)*T` where row `b*T` is its CLS token and the
//! remaining `N` rows are its patches in raster order.

use super::config::{HeadActivation, VitConfig};
use super::ops::{self, NormCache};
use super::weights::VitWeights;
use crate::error::{Error, Result};
use crate::scalar::{matmul, MatMut, MatRef, Scalar};
#[cfg(feature = "parallel")]
use rayon::prelude::*;

macro_rules! chunks_mut {
    ($s:expr, $n:expr) => {{
        #[cfg(feature = "parallel")]
        {
            $s.par_chunks_mut($n)
        }
        #[cfg(not(feature = "parallel"))]
        {
            $s.chunks_mut($n)
        }
    }};
}

#[derive(Clone, Debug)]
struct LayerCache<T> {
    ln1: NormCache<T>,
    h: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    o: Vec<T>,
    ln2: NormCache<T>,
    h2: Vec<T>,
    m1: Vec<T>,
    g: Vec<T>,
}

/// Everything the backward pass needs, plus the head outputs.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    batch: usize,
    patches: Vec<T>,
    layers: Vec<LayerCache<T>>,
    ln_f: NormCache<T>,
    cls: Vec<T>,
    h1: Vec<T>,
    a1: Vec<T>,
    outputs: Vec<T>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Head outputs, `batch x 2` as `(left, right)` pairs.
    pub fn outputs(&self) -> &[T] {
        &self.outputs
    }

    /// Attention weights of `layer`, laid out `batch x heads x T x T`.
    pub fn attention(&self, layer: usize) -> &[T] {
        &self.layers[layer].probs
    }
}

/// Cut `batch` images (`H x W x C` each, concatenated) into flattened patches,
/// one `P*P*C` row per patch, pixels in `(dy, dx, c)` order.
pub fn patchify<T: Scalar>(cfg: &VitConfig, input: &[T], batch: usize) -> Vec<T> {
    let (h, w, c, p) = (cfg.image_height, cfg.image_width, cfg.channels, cfg.patch_size);
    let (gh, gw) = (cfg.grid_height(), cfg.grid_width());
    let mut out = Vec::with_capacity(batch * cfg.num_patches() * cfg.patch_dim());
    for b in 0..batch {
        let img = &input[b * h * w * c..(b + 1) * h * w * c];
        for gy in 0..gh {
            for gx in 0..gw {
                for dy in 0..p {
                    let row = (gy * p + dy) * w + gx * p;
                    out.extend_from_slice(&img[row * c..(row + p) * c]);
                }
            }
        }
    }
    out
}

pub fn forward<T: Scalar>(
    weights: &VitWeights<T>,
    input: &[T],
    batch: usize,
) -> Result<ForwardCache<T>> {
    let cfg = &weights.config;
    if batch == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    if input.len() != batch * cfg.image_len() {
        return Err(Error::Shape(format!(
            "input holds {} values, expected {batch} x {}x{}x{}",
            input.len(),
            cfg.image_height,
            cfg.image_width,
            cfg.channels
        )));
    }
    let d = cfg.embed_dim;
    let n = cfg.num_patches();
    let t = cfg.num_tokens();
    let rows = batch * t;
    let heads = cfg.num_heads;
    let eps = T::from_f64_lossy(cfg.layer_norm_eps);

    let patches = patchify(cfg, input, batch);
    let mut tok = vec![T::zero(); batch * n * d];
    matmul(&patches, &weights.patch_proj, &mut tok, batch * n, cfg.patch_dim(), d);

    let mut z = vec![T::zero(); rows * d];
    for b in 0..batch {
        let zb = &mut z[b * t * d..(b + 1) * t * d];
        for j in 0..d {
            zb[j] = weights.cls_token[j] + weights.pos_embed[j];
        }
        for i in 0..n {
            let src = &tok[(b * n + i) * d..(b * n + i + 1) * d];
            let pos = &weights.pos_embed[(i + 1) * d..(i + 2) * d];
            for j in 0..d {
                zb[(i + 1) * d + j] = src[j] + pos[j];
            }
        }
    }

    let mut layers = Vec::with_capacity(cfg.depth);
    for lw in &weights.layers {
        // attention block
        let (h, ln1) = ops::layer_norm(&z, &lw.ln1_scale, &lw.ln1_shift, d, eps);
        let q = ops::linear(&h, &lw.wq, &lw.bq, rows, d, d);
        let k = ops::linear(&h, &lw.wk, &lw.bk, rows, d, d);
        let v = ops::linear(&h, &lw.wv, &lw.bv, rows, d, d);
        let mut probs = vec![T::zero(); batch * heads * t * t];
        let mut o = vec![T::zero(); rows * d];
        chunks_mut!(o, t * d)
            .zip(chunks_mut!(probs, heads * t * t))
            .enumerate()
            .for_each(|(b, (ob, pb))| {
                let r = b * t * d..(b + 1) * t * d;
                ops::attention_sample(&q[r.clone()], &k[r.clone()], &v[r], pb, ob, t, d, heads);
            });
        let attn_out = ops::linear(&o, &lw.wo, &lw.bo, rows, d, d);
        for (zi, a) in z.iter_mut().zip(&attn_out) {
            *zi = *zi + *a;
        }
        // mlp block
        let (h2, ln2) = ops::layer_norm(&z, &lw.ln2_scale, &lw.ln2_shift, d, eps);
        let m1 = ops::linear(&h2, &lw.w1, &lw.b1, rows, d, cfg.mlp_hidden);
        let g: Vec<T> = m1.iter().map(|&x| ops::gelu(x)).collect();
        let m2 = ops::linear(&g, &lw.w2, &lw.b2, rows, cfg.mlp_hidden, d);
        for (zi, a) in z.iter_mut().zip(&m2) {
            *zi = *zi + *a;
        }
        layers.push(LayerCache {
            ln1,
            h,
            q,
            k,
            v,
            probs,
            o,
            ln2,
            h2,
            m1,
            g,
        });
    }

    let cls_rows: Vec<T> = (0..batch)
        .flat_map(|b| z[b * t * d..b * t * d + d].iter().copied())
        .collect();
    let (cls, ln_f) = ops::layer_norm(&cls_rows, &weights.ln_f_scale, &weights.ln_f_shift, d, eps);
    let f = cfg.fc1_width;
    let h1 = ops::linear(&cls, &weights.fc1_w, &weights.fc1_b, batch, d, f);
    let a1: Vec<T> = match cfg.head_activation {
        HeadActivation::Gelu => h1.iter().map(|&x| ops::gelu(x)).collect(),
        HeadActivation::Identity => h1.clone(),
    };
    let outputs = ops::linear(&a1, &weights.fc2_w, &weights.fc2_b, batch, f, cfg.num_outputs);

    Ok(ForwardCache {
        batch,
        patches,
        layers,
        ln_f,
        cls,
        h1,
        a1,
        outputs,
    })
}

/// Accumulate parameter gradients into `grads` given `d_outputs`, the loss
/// gradient with respect to the head outputs (`batch x 2`).
pub fn backward<T: Scalar>(
    weights: &VitWeights<T>,
    cache: &ForwardCache<T>,
    d_outputs: &[T],
    grads: &mut VitWeights<T>,
) -> Result<()> {
    let cfg = &weights.config;
    let batch = cache.batch;
    if d_outputs.len() != batch * cfg.num_outputs {
        return Err(Error::Shape(format!(
            "output gradient holds {} values, expected {}",
            d_outputs.len(),
            batch * cfg.num_outputs
        )));
    }
    if grads.config != *cfg {
        return Err(Error::Shape("gradient buffer has a different config".into()));
    }
    let d = cfg.embed_dim;
    let n = cfg.num_patches();
    let t = cfg.num_tokens();
    let rows = batch * t;
    let heads = cfg.num_heads;
    let f = cfg.fc1_width;
    let hid = cfg.mlp_hidden;

    // Head.
    let mut da1 = ops::linear_backward(
        &cache.a1,
        &weights.fc2_w,
        d_outputs,
        batch,
        f,
        cfg.num_outputs,
        &mut grads.fc2_w,
        &mut grads.fc2_b,
        true,
    )
    .expect("requested");
    if cfg.head_activation == HeadActivation::Gelu {
        for (g, &x) in da1.iter_mut().zip(&cache.h1) {
            *g = *g * ops::gelu_grad(x);
        }
    }
    let dcls = ops::linear_backward(
        &cache.cls,
        &weights.fc1_w,
        &da1,
        batch,
        d,
        f,
        &mut grads.fc1_w,
        &mut grads.fc1_b,
        true,
    )
    .expect("requested");
    let dcls_rows = ops::layer_norm_backward(
        &dcls,
        &cache.ln_f,
        &weights.ln_f_scale,
        d,
        &mut grads.ln_f_scale,
        &mut grads.ln_f_shift,
    );
    let mut dz = vec![T::zero(); rows * d];
    for b in 0..batch {
        dz[b * t * d..b * t * d + d].copy_from_slice(&dcls_rows[b * d..(b + 1) * d]);
    }

    for (li, lw) in weights.layers.iter().enumerate().rev() {
        let lc = &cache.layers[li];
        let lg = &mut grads.layers[li];

        // MLP branch.
        let mut dg = ops::linear_backward(&lc.g, &lw.w2, &dz, rows, hid, d, &mut lg.w2, &mut lg.b2, true)
            .expect("requested");
        for (g, &x) in dg.iter_mut().zip(&lc.m1) {
            *g = *g * ops::gelu_grad(x);
        }
        let dh2 = ops::linear_backward(&lc.h2, &lw.w1, &dg, rows, d, hid, &mut lg.w1, &mut lg.b1, true)
            .expect("requested");
        let dln2 = ops::layer_norm_backward(&dh2, &lc.ln2, &lw.ln2_scale, d, &mut lg.ln2_scale, &mut lg.ln2_shift);
        for (a, b) in dz.iter_mut().zip(&dln2) {
            *a = *a + *b;
        }

        // Attention branch.
        let d_o = ops::linear_backward(&lc.o, &lw.wo, &dz, rows, d, d, &mut lg.wo, &mut lg.bo, true)
            .expect("requested");
        let mut dq = vec![T::zero(); rows * d];
        let mut dk = vec![T::zero(); rows * d];
        let mut dv = vec![T::zero(); rows * d];
        chunks_mut!(dq, t * d)
            .zip(chunks_mut!(dk, t * d))
            .zip(chunks_mut!(dv, t * d))
            .enumerate()
            .for_each(|(b, ((dqb, dkb), dvb))| {
                let r = b * t * d..(b + 1) * t * d;
                let pr = b * heads * t * t..(b + 1) * heads * t * t;
                ops::attention_sample_backward(
                    &lc.q[r.clone()],
                    &lc.k[r.clone()],
                    &lc.v[r.clone()],
                    &lc.probs[pr],
                    &d_o[r],
                    dqb,
                    dkb,
                    dvb,
                    t,
                    d,
                    heads,
                );
            });
        let mut dh = ops::linear_backward(&lc.h, &lw.wq, &dq, rows, d, d, &mut lg.wq, &mut lg.bq, true)
            .expect("requested");
        let dhk = ops::linear_backward(&lc.h, &lw.wk, &dk, rows, d, d, &mut lg.wk, &mut lg.bk, true)
            .expect("requested");
        let dhv = ops::linear_backward(&lc.h, &lw.wv, &dv, rows, d, d, &mut lg.wv, &mut lg.bv, true)
            .expect("requested");
        for ((a, b), c) in dh.iter_mut().zip(&dhk).zip(&dhv) {
            *a = *a + *b + *c;
        }
        let dln1 = ops::layer_norm_backward(&dh, &lc.ln1, &lw.ln1_scale, d, &mut lg.ln1_scale, &mut lg.ln1_shift);
        for (a, b) in dz.iter_mut().zip(&dln1) {
            *a = *a + *b;
        }
    }

    // Embedding.
    let mut dtok = vec![T::zero(); batch * n * d];
    for b in 0..batch {
        let dzb = &dz[b * t * d..(b + 1) * t * d];
        for j in 0..d {
            grads.cls_token[j] = grads.cls_token[j] + dzb[j];
        }
        for (gp, &g) in grads.pos_embed.iter_mut().zip(dzb) {
            *gp = *gp + g;
        }
        dtok[b * n * d..(b + 1) * n * d].copy_from_slice(&dzb[d..]);
    }
    T::gemm(
        T::one(),
        MatRef::new(&cache.patches, batch * n, cfg.patch_dim()).t(),
        MatRef::new(&dtok, batch * n, d),
        T::one(),
        MatMut::new(&mut grads.patch_proj, cfg.patch_dim(), d),
    );
    Ok(())
}
