//! Small dense building blocks shared by the fusion block and the head.

use ndarray::{linalg::general_mat_mul, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{ParamSet, Real};

/// `x W + b` with `W` stored input-major (`in x out`).
pub(crate) fn linear<T: Real>(x: ArrayView2<T>, w: ArrayView2<T>, b: ArrayView1<T>) -> Array2<T> {
    let mut y = x.dot(&w);
    y += &b;
    y
}

/// Accumulates the gradients of parameters `(w, b)` into `grads` and returns
/// the input gradient.
pub(crate) fn linear_backward<T: Real>(
    x: ArrayView2<T>,
    params: &ParamSet<T>,
    (w, b): (usize, usize),
    dy: ArrayView2<T>,
    grads: &mut ParamSet<T>,
) -> Array2<T> {
    general_mat_mul(T::one(), &x.t(), &dy, T::one(), &mut grads.m2_mut(w));
    let mut db = grads.v1_mut(b);
    db += &dy.sum_axis(Axis(0));
    dy.dot(&params.m2(w).t())
}

pub(crate) fn relu_in_place<T: Real>(values: &mut [T], gates: &[bool]) {
    for (v, &g) in values.iter_mut().zip(gates) {
        if !g {
            *v = T::zero();
        }
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub(crate) struct LayerNormCache<T> {
    pub xhat: Array2<T>,
    pub inv_std: Array1<T>,
}

/// Row-wise layer normalization with a learned affine map.
pub(crate) fn layer_norm<T: Real>(
    x: ArrayView2<T>,
    gamma: ArrayView1<T>,
    beta: ArrayView1<T>,
    eps: f64,
) -> (Array2<T>, LayerNormCache<T>) {
    let d = T::lit(x.ncols() as f64);
    let mut xhat = x.to_owned();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<T>() / d;
        *inv = T::one() / (var + T::lit(eps)).sqrt();
        let s = *inv;
        row.mapv_inplace(|v| v * s);
    }
    let y = &xhat * &gamma + beta;
    (y, LayerNormCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward<T: Real>(
    cache: &LayerNormCache<T>,
    params: &ParamSet<T>,
    (g, b): (usize, usize),
    dy: ArrayView2<T>,
    grads: &mut ParamSet<T>,
) -> Array2<T> {
    {
        let mut dgamma = grads.v1_mut(g);
        dgamma += &(&dy * &cache.xhat).sum_axis(Axis(0));
    }
    {
        let mut dbeta = grads.v1_mut(b);
        dbeta += &dy.sum_axis(Axis(0));
    }
    let d = T::lit(dy.ncols() as f64);
    let mut dx = &dy * &params.v1(g);
    for ((mut row, xh), &inv) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(&cache.inv_std)
    {
        let mean_g = row.sum() / d;
        let mean_gx = row.iter().zip(xh).map(|(&g, &x)| g * x).sum::<T>() / d;
        row.zip_mut_with(&xh, |g, &x| *g = inv * (*g - mean_g - x * mean_gx));
    }
    dx
}
