//! Row-major dense kernels shared by the forward and backward passes.

use crate::Real;

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail = ca.remainder().iter().zip(cb.remainder()).fold(T::zero(), |s, (&x, &y)| s + x * y);
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[4]) + (acc[1] + acc[5]) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y[i] = W x[i] + b` for `n` rows; `w` is `[out, in]`.
pub(crate) fn linear<T: Real>(x: &[T], in_dim: usize, w: &[T], b: &[T], out_dim: usize) -> Vec<T> {
    let n = x.len() / in_dim;
    let mut y = Vec::with_capacity(n * out_dim);
    for row in x.chunks_exact(in_dim) {
        for (o, wr) in w.chunks_exact(in_dim).enumerate() {
            y.push(dot(row, wr) + b[o]);
        }
    }
    debug_assert_eq!(y.len(), n * out_dim);
    y
}

/// Accumulates `dW += dYᵀX`, `db += Σ dY`, and returns `dX = dY W`.
pub(crate) fn linear_backward<T: Real>(
    x: &[T],
    in_dim: usize,
    w: &[T],
    dy: &[T],
    out_dim: usize,
    dw: &mut [T],
    db: &mut [T],
) -> Vec<T> {
    let mut dx = vec![T::zero(); x.len()];
    for ((xr, dyr), dxr) in x
        .chunks_exact(in_dim)
        .zip(dy.chunks_exact(out_dim))
        .zip(dx.chunks_exact_mut(in_dim))
    {
        for (o, &g) in dyr.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            db[o] += g;
            let wr = &w[o * in_dim..(o + 1) * in_dim];
            let dwr = &mut dw[o * in_dim..(o + 1) * in_dim];
            for k in 0..in_dim {
                dwr[k] += g * xr[k];
                dxr[k] += g * wr[k];
            }
        }
    }
    dx
}

/// Per-row normalization statistics kept for the backward pass.
pub(crate) struct LnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Layer normalization over rows of width `dim` (population variance).
pub fn layer_norm<T: Real>(x: &[T], dim: usize, gain: &[T], bias: &[T], eps: T) -> Vec<T> {
    layer_norm_cached(x, dim, gain, bias, eps).0
}

pub(crate) fn layer_norm_cached<T: Real>(x: &[T], dim: usize, gain: &[T], bias: &[T], eps: T) -> (Vec<T>, LnCache<T>) {
    let n = x.len() / dim;
    let d = T::from_usize_lossy(dim);
    let mut y = Vec::with_capacity(x.len());
    let mut xhat = Vec::with_capacity(x.len());
    let mut inv_std = Vec::with_capacity(n);
    for row in x.chunks_exact(dim) {
        let mean = row.iter().copied().sum::<T>() / d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / d;
        let is = T::one() / (var + eps).sqrt();
        inv_std.push(is);
        for (k, &v) in row.iter().enumerate() {
            let h = (v - mean) * is;
            xhat.push(h);
            y.push(h * gain[k] + bias[k]);
        }
    }
    (y, LnCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward<T: Real>(
    cache: &LnCache<T>,
    dim: usize,
    gain: &[T],
    dy: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let d = T::from_usize_lossy(dim);
    let mut dx = vec![T::zero(); dy.len()];
    let mut dxhat = vec![T::zero(); dim];
    for (r, ((dyr, xr), dxr)) in dy
        .chunks_exact(dim)
        .zip(cache.xhat.chunks_exact(dim))
        .zip(dx.chunks_exact_mut(dim))
        .enumerate()
    {
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for k in 0..dim {
            dgain[k] += dyr[k] * xr[k];
            dbias[k] += dyr[k];
            dxhat[k] = dyr[k] * gain[k];
            mean_dxhat += dxhat[k];
            mean_dxhat_xhat += dxhat[k] * xr[k];
        }
        mean_dxhat /= d;
        mean_dxhat_xhat /= d;
        let is = cache.inv_std[r];
        for k in 0..dim {
            dxr[k] = is * (dxhat[k] - mean_dxhat - xr[k] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_COEF: f64 = 0.044715;

/// GELU, tanh approximation: `0.5x(1 + tanh(√(2/π)(x + 0.044715x³)))`.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let u = c * (x + T::lit(GELU_COEF) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

#[inline]
pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let a = T::lit(GELU_COEF);
    let t = (c * (x + a * x * x * x)).tanh();
    let half = T::lit(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
}

/// In-place max-subtracted softmax.
pub(crate) fn softmax_in_place<T: Real>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}
