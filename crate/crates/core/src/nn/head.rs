use ndarray::{Array1, Array2, ArrayView2};

use super::model::Model;
use super::ops::{linear, linear_backward, relu_in_place};
use super::route::Route;
use super::{ParamSet, Real};

/// Rows whose norm falls at or below this are treated as zero.
pub const MIN_NORM: f64 = 1e-12;

pub(crate) struct HeadCache<T> {
    input: Option<Array2<T>>,
    hidden: Array2<T>,
    gates: Vec<bool>,
    out: Array2<T>,
    norms: Array1<T>,
}

/// Row-wise L2 normalization. A row with (near) zero norm becomes `e_1`; the
/// number of such rows is returned alongside.
pub fn normalize_rows<T: Real>(x: ArrayView2<T>) -> (Array2<T>, Array1<T>, usize) {
    let mut out = x.to_owned();
    let mut norms = Array1::zeros(x.nrows());
    let mut degenerate = 0;
    for (mut row, n) in out.rows_mut().into_iter().zip(norms.iter_mut()) {
        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        *n = norm;
        if norm.f64() > MIN_NORM {
            row.mapv_inplace(|v| v / norm);
        } else {
            row.fill(T::zero());
            row[0] = T::one();
            degenerate += 1;
        }
    }
    (out, norms, degenerate)
}

/// Backward of [`normalize_rows`]; replaced rows pass no gradient.
pub(crate) fn normalize_backward<T: Real>(
    y: &Array2<T>,
    norms: &Array1<T>,
    dy: ArrayView2<T>,
) -> Array2<T> {
    let mut dx = dy.to_owned();
    for ((mut row, yr), &n) in dx.rows_mut().into_iter().zip(y.rows()).zip(norms) {
        if n.f64() > MIN_NORM {
            let proj = row.iter().zip(yr).map(|(&g, &v)| g * v).sum::<T>();
            row.zip_mut_with(&yr, |g, &v| *g = (*g - v * proj) / n);
        } else {
            row.fill(T::zero());
        }
    }
    dx
}

impl<T: Real> Model<T> {
    /// Projection head followed by normalization. The third element counts
    /// degenerate rows.
    pub(crate) fn head_forward(
        &self,
        x: ArrayView2<T>,
        route: &mut Route,
    ) -> (Array2<T>, HeadCache<T>, usize) {
        let p = &self.params;
        let ids = &self.ids;
        let mut hidden = linear(x, p.m2(ids.p1), p.v1(ids.pb1));
        let gates = route.gates(hidden.as_slice().expect("contiguous"));
        relu_in_place(hidden.as_slice_mut().expect("contiguous"), &gates);
        let z = linear(hidden.view(), p.m2(ids.p2), p.v1(ids.pb2));
        let (out, norms, degenerate) = normalize_rows(z.view());
        (
            out.clone(),
            HeadCache {
                input: Some(x.to_owned()),
                hidden,
                gates,
                out,
                norms,
            },
            degenerate,
        )
    }

    /// Normalization alone, for queries that skip the projection head.
    pub(crate) fn norm_only_forward(&self, x: ArrayView2<T>) -> (Array2<T>, HeadCache<T>, usize) {
        let (out, norms, degenerate) = normalize_rows(x);
        (
            out.clone(),
            HeadCache {
                input: None,
                hidden: Array2::zeros((0, 0)),
                gates: Vec::new(),
                out,
                norms,
            },
            degenerate,
        )
    }

    pub(crate) fn head_backward(
        &self,
        cache: &HeadCache<T>,
        d_out: ArrayView2<T>,
        grads: &mut ParamSet<T>,
    ) -> Array2<T> {
        let dz = normalize_backward(&cache.out, &cache.norms, d_out);
        let Some(input) = &cache.input else {
            return dz;
        };
        let p = &self.params;
        let ids = &self.ids;
        let mut dh = linear_backward(cache.hidden.view(), p, (ids.p2, ids.pb2), dz.view(), grads);
        relu_in_place(dh.as_slice_mut().expect("contiguous"), &cache.gates);
        linear_backward(input.view(), p, (ids.p1, ids.pb1), dh.view(), grads)
    }
}
