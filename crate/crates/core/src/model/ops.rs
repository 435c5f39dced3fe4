//! Row-major building blocks with hand-written backward passes.

use crate::scalar::{MatMut, MatRef, Scalar};

/// `y = x W + b` for `x: rows x n_in`, `W: n_in x n_out`.
pub(crate) fn linear<T: Scalar>(
    x: &[T],
    w: &[T],
    b: &[T],
    rows: usize,
    n_in: usize,
    n_out: usize,
) -> Vec<T> {
    let mut y = Vec::with_capacity(rows * n_out);
    for _ in 0..rows {
        y.extend_from_slice(b);
    }
    T::gemm(
        T::one(),
        MatRef::new(x, rows, n_in),
        MatRef::new(w, n_in, n_out),
        T::one(),
        MatMut::new(&mut y, rows, n_out),
    );
    y
}

/// Accumulates `dW += x^T dy`, `db += colsum(dy)` and returns `dx = dy W^T`
/// when `want_dx` is set.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    rows: usize,
    n_in: usize,
    n_out: usize,
    dw: &mut [T],
    db: &mut [T],
    want_dx: bool,
) -> Option<Vec<T>> {
    T::gemm(
        T::one(),
        MatRef::new(x, rows, n_in).t(),
        MatRef::new(dy, rows, n_out),
        T::one(),
        MatMut::new(dw, n_in, n_out),
    );
    for row in dy.chunks_exact(n_out) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc = *acc + g;
        }
    }
    want_dx.then(|| {
        let mut dx = vec![T::zero(); rows * n_in];
        T::gemm(
            T::one(),
            MatRef::new(dy, rows, n_out),
            MatRef::new(w, n_in, n_out).t(),
            T::zero(),
            MatMut::new(&mut dx, rows, n_in),
        );
        dx
    })
}

#[derive(Clone, Debug, Default)]
pub(crate) struct NormCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub(crate) fn layer_norm<T: Scalar>(
    x: &[T],
    scale: &[T],
    shift: &[T],
    dim: usize,
    eps: T,
) -> (Vec<T>, NormCache<T>) {
    let rows = x.len() / dim;
    let n = T::from_usize(dim).expect("dim fits");
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * dim..(r + 1) * dim];
        let mean = row.iter().fold(T::zero(), |a, &v| a + v) / n;
        let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
        let rs = (var + eps).sqrt().recip();
        rstd[r] = rs;
        for j in 0..dim {
            let xh = (row[j] - mean) * rs;
            xhat[r * dim + j] = xh;
            y[r * dim + j] = xh * scale[j] + shift[j];
        }
    }
    (y, NormCache { xhat, rstd })
}

/// Returns `dx`; accumulates into `dscale`, `dshift`.
pub(crate) fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &NormCache<T>,
    scale: &[T],
    dim: usize,
    dscale: &mut [T],
    dshift: &mut [T],
) -> Vec<T> {
    let rows = dy.len() / dim;
    let n = T::from_usize(dim).expect("dim fits");
    let mut dx = vec![T::zero(); dy.len()];
    let mut dxhat = vec![T::zero(); dim];
    for r in 0..rows {
        let dyr = &dy[r * dim..(r + 1) * dim];
        let xh = &cache.xhat[r * dim..(r + 1) * dim];
        let mut mean_d = T::zero();
        let mut mean_dx = T::zero();
        for j in 0..dim {
            dscale[j] = dscale[j] + dyr[j] * xh[j];
            dshift[j] = dshift[j] + dyr[j];
            dxhat[j] = dyr[j] * scale[j];
            mean_d = mean_d + dxhat[j];
            mean_dx = mean_dx + dxhat[j] * xh[j];
        }
        mean_d = mean_d / n;
        mean_dx = mean_dx / n;
        let rs = cache.rstd[r];
        for j in 0..dim {
            dx[r * dim + j] = rs * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GELU.
pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (x * T::from_f64_lossy(FRAC_1_SQRT_2)).erf())
}

pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::from_f64_lossy(0.5);
    let cdf = half * (T::one() + (x * T::from_f64_lossy(FRAC_1_SQRT_2)).erf());
    let pdf = T::from_f64_lossy(INV_SQRT_2PI) * (-half * x * x).exp();
    cdf + x * pdf
}

/// In-place numerically stable softmax over each `width`-long row.
pub(crate) fn softmax_rows<T: Scalar>(s: &mut [T], width: usize) {
    for row in s.chunks_exact_mut(width) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        let inv = sum.recip();
        row.iter_mut().for_each(|v| *v = *v * inv);
    }
}

/// Multi-head attention for one sample. `q`, `k`, `v`, `o` are `tokens x dim`
/// with head `h` occupying columns `h*hd..(h+1)*hd`; `probs` receives the
/// `heads x tokens x tokens` attention weights.
pub(crate) fn attention_sample<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &mut [T],
    o: &mut [T],
    tokens: usize,
    dim: usize,
    heads: usize,
) {
    let hd = dim / heads;
    let scale = T::from_usize(hd).expect("fits").sqrt().recip();
    for h in 0..heads {
        let off = h * hd;
        let p = &mut probs[h * tokens * tokens..(h + 1) * tokens * tokens];
        T::gemm(
            scale,
            MatRef::strided(&q[off..], tokens, hd, dim, 1),
            MatRef::strided(&k[off..], tokens, hd, dim, 1).t(),
            T::zero(),
            MatMut::new(p, tokens, tokens),
        );
        softmax_rows(p, tokens);
        T::gemm(
            T::one(),
            MatRef::new(p, tokens, tokens),
            MatRef::strided(&v[off..], tokens, hd, dim, 1),
            T::zero(),
            MatMut::strided(&mut o[off..], tokens, hd, dim, 1),
        );
    }
}

/// Backward of [`attention_sample`]; overwrites `dq`, `dk`, `dv`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_sample_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    d_o: &[T],
    dq: &mut [T],
    dk: &mut [T],
    dv: &mut [T],
    tokens: usize,
    dim: usize,
    heads: usize,
) {
    let hd = dim / heads;
    let scale = T::from_usize(hd).expect("fits").sqrt().recip();
    let mut dp = vec![T::zero(); tokens * tokens];
    for h in 0..heads {
        let off = h * hd;
        let p = &probs[h * tokens * tokens..(h + 1) * tokens * tokens];
        let d_oh = MatRef::strided(&d_o[off..], tokens, hd, dim, 1);
        // dV = P^T dO
        T::gemm(
            T::one(),
            MatRef::new(p, tokens, tokens).t(),
            d_oh,
            T::zero(),
            MatMut::strided(&mut dv[off..], tokens, hd, dim, 1),
        );
        // dP = dO V^T
        T::gemm(
            T::one(),
            d_oh,
            MatRef::strided(&v[off..], tokens, hd, dim, 1).t(),
            T::zero(),
            MatMut::new(&mut dp, tokens, tokens),
        );
        // dS = P * (dP - rowsum(dP * P))
        for (dpr, pr) in dp.chunks_exact_mut(tokens).zip(p.chunks_exact(tokens)) {
            let dot = dpr.iter().zip(pr).fold(T::zero(), |a, (&x, &y)| a + x * y);
            for (d, &pv) in dpr.iter_mut().zip(pr) {
                *d = pv * (*d - dot);
            }
        }
        // dQ = scale * dS K ; dK = scale * dS^T Q
        T::gemm(
            scale,
            MatRef::new(&dp, tokens, tokens),
            MatRef::strided(&k[off..], tokens, hd, dim, 1),
            T::zero(),
            MatMut::strided(&mut dq[off..], tokens, hd, dim, 1),
        );
        T::gemm(
            scale,
            MatRef::new(&dp, tokens, tokens).t(),
            MatRef::strided(&q[off..], tokens, hd, dim, 1),
            T::zero(),
            MatMut::strided(&mut dk[off..], tokens, hd, dim, 1),
        );
    }
}
