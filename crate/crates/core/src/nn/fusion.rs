//! Pre-norm single-head self-attention block over the four view tokens of
//! each sample, followed by a ReLU feed-forward layer. There is no positional
//! encoding: the views form a set.

use ndarray::{s, Array2, Array3, ArrayView2, Axis};

use super::model::Model;
use super::ops::{
    layer_norm, layer_norm_backward, linear, linear_backward, relu_in_place, LayerNormCache,
};
use super::route::Route;
use super::{ParamSet, Real, VIEWS};
use crate::error::{Error, Result};

pub(crate) struct FusionCache<T> {
    ln1: LayerNormCache<T>,
    u: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    attn: Array3<T>,
    mixed: Array2<T>,
    ln2: LayerNormCache<T>,
    u2: Array2<T>,
    hidden: Array2<T>,
    gates: Vec<bool>,
}

impl<T: Real> Model<T> {
    /// `tokens` holds `VIEWS` consecutive rows per sample; returns one
    /// `VIEWS * D` row per sample.
    pub(crate) fn fusion_forward(
        &self,
        tokens: ArrayView2<T>,
        route: &mut Route,
    ) -> Result<(Array2<T>, FusionCache<T>)> {
        let d = self.cfg.rnn_hidden;
        if tokens.ncols() != d || !tokens.nrows().is_multiple_of(VIEWS) {
            return Err(Error::Contract(format!(
                "fusion expects groups of {VIEWS} tokens of width {d}, got {}x{}",
                tokens.nrows(),
                tokens.ncols()
            )));
        }
        let p = &self.params;
        let ids = &self.ids;
        let samples = tokens.nrows() / VIEWS;
        let (u, ln1) = layer_norm(tokens, p.v1(ids.ln1_g), p.v1(ids.ln1_b), self.cfg.ln_eps);
        let q = linear(u.view(), p.m2(ids.wq), p.v1(ids.bq));
        let k = linear(u.view(), p.m2(ids.wk), p.v1(ids.bk));
        let v = linear(u.view(), p.m2(ids.wv), p.v1(ids.bv));
        let scale = T::one() / T::lit(d as f64).sqrt();
        let mut attn = Array3::zeros((samples, VIEWS, VIEWS));
        let mut mixed = Array2::zeros(tokens.raw_dim());
        for i in 0..samples {
            let rows = s![i * VIEWS..(i + 1) * VIEWS, ..];
            let mut a = q.slice(rows).dot(&k.slice(rows).t()) * scale;
            for mut row in a.rows_mut() {
                let top = row.fold(T::neg_infinity(), |m, &x| m.max(x));
                row.mapv_inplace(|x| (x - top).exp());
                let z = row.sum();
                row.mapv_inplace(|x| x / z);
            }
            mixed.slice_mut(rows).assign(&a.dot(&v.slice(rows)));
            attn.index_axis_mut(Axis(0), i).assign(&a);
        }
        let h = &tokens + &linear(mixed.view(), p.m2(ids.wo), p.v1(ids.bo));
        let (u2, ln2) = layer_norm(h.view(), p.v1(ids.ln2_g), p.v1(ids.ln2_b), self.cfg.ln_eps);
        let mut hidden = linear(u2.view(), p.m2(ids.w1), p.v1(ids.b1));
        let gates = route.gates(hidden.as_slice().expect("contiguous"));
        relu_in_place(hidden.as_slice_mut().expect("contiguous"), &gates);
        let y = h + linear(hidden.view(), p.m2(ids.w2), p.v1(ids.b2));
        let fused = y
            .into_shape_with_order((samples, VIEWS * d))
            .expect("contiguous tokens");
        Ok((
            fused,
            FusionCache {
                ln1,
                u,
                q,
                k,
                v,
                attn,
                mixed,
                ln2,
                u2,
                hidden,
                gates,
            },
        ))
    }

    /// Returns the gradient with respect to the input tokens.
    pub(crate) fn fusion_backward(
        &self,
        cache: &FusionCache<T>,
        d_fused: ArrayView2<T>,
        grads: &mut ParamSet<T>,
    ) -> Array2<T> {
        let d = self.cfg.rnn_hidden;
        let p = &self.params;
        let ids = &self.ids;
        let samples = d_fused.nrows();
        let dy = d_fused
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((samples * VIEWS, d))
            .expect("contiguous gradient");

        let mut d_hidden =
            linear_backward(cache.hidden.view(), p, (ids.w2, ids.b2), dy.view(), grads);
        relu_in_place(d_hidden.as_slice_mut().expect("contiguous"), &cache.gates);
        let d_u2 = linear_backward(cache.u2.view(), p, (ids.w1, ids.b1), d_hidden.view(), grads);
        let dh =
            dy + layer_norm_backward(&cache.ln2, p, (ids.ln2_g, ids.ln2_b), d_u2.view(), grads);

        let d_mixed = linear_backward(cache.mixed.view(), p, (ids.wo, ids.bo), dh.view(), grads);
        let scale = T::one() / T::lit(d as f64).sqrt();
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for i in 0..samples {
            let rows = s![i * VIEWS..(i + 1) * VIEWS, ..];
            let a = cache.attn.index_axis(Axis(0), i);
            let g = d_mixed.slice(rows);
            let da = g.dot(&cache.v.slice(rows).t());
            dv.slice_mut(rows).assign(&a.t().dot(&g));
            let mut ds = &da * &a;
            for (mut row, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
                let total = row.sum();
                row.zip_mut_with(&arow, |x, &w| *x -= w * total);
            }
            dq.slice_mut(rows)
                .assign(&(ds.dot(&cache.k.slice(rows)) * scale));
            dk.slice_mut(rows)
                .assign(&(ds.t().dot(&cache.q.slice(rows)) * scale));
        }
        let du = linear_backward(cache.u.view(), p, (ids.wq, ids.bq), dq.view(), grads)
            + linear_backward(cache.u.view(), p, (ids.wk, ids.bk), dk.view(), grads)
            + linear_backward(cache.u.view(), p, (ids.wv, ids.bv), dv.view(), grads);
        dh + layer_norm_backward(&cache.ln1, p, (ids.ln1_g, ids.ln1_b), du.view(), grads)
    }
}
