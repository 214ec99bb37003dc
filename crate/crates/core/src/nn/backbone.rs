//! Conv blocks and recurrent layer. Activations are kept channel-major as a
//! `(channels, batch * height * width)` matrix so that every convolution is
//! a single matrix product over an im2col buffer.

use ndarray::{
    concatenate, linalg::general_mat_mul, s, Array1, Array2, ArrayView2, ArrayView3, Axis,
};

use super::model::{Mode, Model};
use super::ops::{relu_in_place, sigmoid};
use super::route::Route;
use super::{ParamSet, Real, RnnKind, Temporal};
use crate::error::{Error, Result};

/// Upper bound on im2col buffer elements; larger batches are processed in
/// chunks of whole images.
const COLS_BUDGET: usize = 1 << 22;

pub(crate) struct BlockCache<T> {
    input: Array2<T>,
    h: usize,
    w: usize,
    xhat: Array2<T>,
    inv_std: Array1<T>,
    train: bool,
    gates: Vec<bool>,
    winners: Vec<u8>,
}

pub(crate) struct RnnCache<T> {
    xs: Vec<Array2<T>>,
    hs: Vec<Array2<T>>,
    acts: Vec<Array2<T>>,
    ghn: Vec<Array2<T>>,
}

pub(crate) struct BackboneCache<T> {
    batch: usize,
    blocks: Vec<BlockCache<T>>,
    final_hw: (usize, usize),
    rnn: RnnCache<T>,
}

/// Channel means and unbiased variances observed in one training batch.
pub type BlockStats = (Array1<f64>, Array1<f64>);

fn im2col<T: Real>(
    x: &Array2<T>,
    images: std::ops::Range<usize>,
    h: usize,
    w: usize,
    cols: &mut Array2<T>,
) {
    let hw = h * w;
    let nb = images.len();
    for ci in 0..x.nrows() {
        let plane = x.row(ci);
        let plane = plane.as_slice().expect("contiguous activations");
        for ky in 0..3 {
            for kx in 0..3 {
                let mut row = cols.row_mut(ci * 9 + ky * 3 + kx);
                let dst = row.as_slice_mut().expect("contiguous cols");
                for (bi, b) in images.clone().enumerate() {
                    for y in 0..h {
                        let out = &mut dst[bi * hw + y * w..bi * hw + (y + 1) * w];
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            out.fill(T::zero());
                            continue;
                        }
                        let src = &plane[b * hw + sy as usize * w..b * hw + (sy as usize + 1) * w];
                        match kx {
                            0 => {
                                out[0] = T::zero();
                                out[1..].copy_from_slice(&src[..w - 1]);
                            }
                            1 => out.copy_from_slice(src),
                            _ => {
                                out[..w - 1].copy_from_slice(&src[1..]);
                                out[w - 1] = T::zero();
                            }
                        }
                    }
                }
                debug_assert_eq!(dst.len(), nb * hw);
            }
        }
    }
}

fn col2im<T: Real>(
    cols: &Array2<T>,
    images: std::ops::Range<usize>,
    h: usize,
    w: usize,
    dx: &mut Array2<T>,
) {
    let hw = h * w;
    for ci in 0..dx.nrows() {
        let mut plane = dx.row_mut(ci);
        let plane = plane.as_slice_mut().expect("contiguous gradient");
        for ky in 0..3 {
            for kx in 0..3 {
                let row = cols.row(ci * 9 + ky * 3 + kx);
                let src = row.as_slice().expect("contiguous cols");
                for (bi, b) in images.clone().enumerate() {
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let g = &src[bi * hw + y * w..bi * hw + (y + 1) * w];
                        let dst =
                            &mut plane[b * hw + sy as usize * w..b * hw + (sy as usize + 1) * w];
                        match kx {
                            0 => dst[..w - 1]
                                .iter_mut()
                                .zip(&g[1..])
                                .for_each(|(d, &v)| *d += v),
                            1 => dst.iter_mut().zip(g).for_each(|(d, &v)| *d += v),
                            _ => dst[1..]
                                .iter_mut()
                                .zip(&g[..w - 1])
                                .for_each(|(d, &v)| *d += v),
                        }
                    }
                }
            }
        }
    }
}

fn chunk_images(k: usize, hw: usize) -> usize {
    (COLS_BUDGET / (k * hw)).max(1)
}

/// 3x3 convolution, stride 1, zero padding 1, no bias.
fn conv_forward<T: Real>(
    x: &Array2<T>,
    batch: usize,
    h: usize,
    w: usize,
    weight: ArrayView2<T>,
) -> Array2<T> {
    let hw = h * w;
    let k = weight.ncols();
    let mut out = Array2::zeros((weight.nrows(), batch * hw));
    let step = chunk_images(k, hw);
    let mut cols = Array2::zeros((k, step.min(batch) * hw));
    for b0 in (0..batch).step_by(step) {
        let b1 = (b0 + step).min(batch);
        let n = (b1 - b0) * hw;
        if cols.ncols() != n {
            cols = Array2::zeros((k, n));
        }
        im2col(x, b0..b1, h, w, &mut cols);
        let mut dst = out.slice_mut(s![.., b0 * hw..b1 * hw]);
        general_mat_mul(T::one(), &weight, &cols, T::zero(), &mut dst);
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Real>(
    x: &Array2<T>,
    batch: usize,
    h: usize,
    w: usize,
    weight: ArrayView2<T>,
    dy: &Array2<T>,
    dweight: &mut ndarray::ArrayViewMut2<T>,
    want_input: bool,
) -> Option<Array2<T>> {
    let hw = h * w;
    let k = weight.ncols();
    let step = chunk_images(k, hw);
    let mut dx = want_input.then(|| Array2::zeros(x.dim()));
    let mut cols = Array2::zeros((k, step.min(batch) * hw));
    let mut dcols = Array2::zeros((0, 0));
    for b0 in (0..batch).step_by(step) {
        let b1 = (b0 + step).min(batch);
        let n = (b1 - b0) * hw;
        if cols.ncols() != n {
            cols = Array2::zeros((k, n));
        }
        im2col(x, b0..b1, h, w, &mut cols);
        let g = dy.slice(s![.., b0 * hw..b1 * hw]);
        general_mat_mul(T::one(), &g, &cols.t(), T::one(), dweight);
        if let Some(dx) = dx.as_mut() {
            if dcols.dim() != (k, n) {
                dcols = Array2::zeros((k, n));
            }
            general_mat_mul(T::one(), &weight.t(), &g, T::zero(), &mut dcols);
            col2im(&dcols, b0..b1, h, w, dx);
        }
    }
    dx
}

/// 2x2 max-pool winners (offset 0..4 within each window, first maximum wins).
fn pool_winners<T: Real>(x: &Array2<T>, batch: usize, h: usize, w: usize) -> Vec<u8> {
    let (h2, w2) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(x.nrows() * batch * h2 * w2);
    for row in x.rows() {
        let plane = row.as_slice().expect("contiguous activations");
        for img in plane.chunks_exact(h * w) {
            for y in 0..h2 {
                let top = &img[2 * y * w..2 * y * w + 2 * w2];
                let bottom = &img[(2 * y + 1) * w..(2 * y + 1) * w + 2 * w2];
                for (t, b) in top.chunks_exact(2).zip(bottom.chunks_exact(2)) {
                    let mut best = 0u8;
                    let mut v = t[0];
                    if t[1] > v {
                        best = 1;
                        v = t[1];
                    }
                    if b[0] > v {
                        best = 2;
                        v = b[0];
                    }
                    if b[1] > v {
                        best = 3;
                    }
                    out.push(best);
                }
            }
        }
    }
    out
}

/// Calls `f(pooled index, source index)` for every window of one channel.
#[inline]
fn for_each_window(
    winners: &[u8],
    batch: usize,
    h: usize,
    w: usize,
    mut f: impl FnMut(usize, usize),
) {
    let (h2, w2) = (h / 2, w / 2);
    let mut i = 0;
    for b in 0..batch {
        for y in 0..h2 {
            let base = b * h * w + 2 * y * w;
            for xx in 0..w2 {
                let o = winners[i] as usize;
                f(i, base + (o >> 1) * w + 2 * xx + (o & 1));
                i += 1;
            }
        }
    }
}

fn pool_gather<T: Real>(
    x: &Array2<T>,
    winners: &[u8],
    batch: usize,
    h: usize,
    w: usize,
) -> Array2<T> {
    let per = batch * (h / 2) * (w / 2);
    let mut out = Array2::zeros((x.nrows(), per));
    for (c, (mut dst, src)) in out.rows_mut().into_iter().zip(x.rows()).enumerate() {
        let dst = dst.as_slice_mut().expect("contiguous output");
        let src = src.as_slice().expect("contiguous activations");
        for_each_window(&winners[c * per..(c + 1) * per], batch, h, w, |i, j| {
            dst[i] = src[j]
        });
    }
    out
}

fn pool_scatter<T: Real>(
    dy: &Array2<T>,
    winners: &[u8],
    batch: usize,
    h: usize,
    w: usize,
) -> Array2<T> {
    let per = batch * (h / 2) * (w / 2);
    let mut dx = Array2::zeros((dy.nrows(), batch * h * w));
    for (c, (mut dst, src)) in dx.rows_mut().into_iter().zip(dy.rows()).enumerate() {
        let dst = dst.as_slice_mut().expect("contiguous gradient");
        let src = src.as_slice().expect("contiguous gradient");
        for_each_window(&winners[c * per..(c + 1) * per], batch, h, w, |i, j| {
            dst[j] += src[i]
        });
    }
    dx
}

impl<T: Real> Model<T> {
    /// Maps a batch of `(n_mels, n_frames)` spectrograms to one embedding
    /// row each. In training mode the batch statistics of every norm layer
    /// are returned so the caller can fold them into the running estimates.
    pub(crate) fn backbone_forward(
        &self,
        x: ArrayView3<T>,
        mode: Mode,
        route: &mut Route,
    ) -> Result<(Array2<T>, BackboneCache<T>, Vec<BlockStats>)> {
        let (batch, f, t) = x.dim();
        if (f, t) != (self.n_mels, self.n_frames) {
            return Err(Error::Contract(format!(
                "spectrogram shape {f}x{t} does not match the model input {}x{}",
                self.n_mels, self.n_frames
            )));
        }
        if batch == 0 {
            return Err(Error::EmptyInput("backbone needs at least one view".into()));
        }
        let eps = T::lit(self.cfg.bn_eps);
        let mut maps = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((1, batch * f * t))
            .expect("contiguous input");
        let (mut h, mut w) = (f, t);
        let mut blocks = Vec::with_capacity(self.cfg.channels.len());
        let mut stats = Vec::new();
        for i in 0..self.cfg.channels.len() {
            let mut y = conv_forward(&maps, batch, h, w, self.params.m2(self.ids.conv[i]));
            let n = y.ncols();
            let mut inv_std = Array1::zeros(y.nrows());
            let train = mode == Mode::Train;
            let unbias = if n > 1 {
                n as f64 / (n - 1) as f64
            } else {
                1.0
            };
            let mut moments = (Array1::zeros(y.nrows()), Array1::zeros(y.nrows()));
            for (c, mut row) in y.rows_mut().into_iter().enumerate() {
                let (mean, var) = if train {
                    let mean = row.sum() / T::lit(n as f64);
                    let var =
                        row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / T::lit(n as f64);
                    moments.0[c] = mean.f64();
                    moments.1[c] = var.f64() * unbias;
                    (mean, var)
                } else {
                    (
                        self.buffers.v1(self.ids.bn_mean[i])[c],
                        self.buffers.v1(self.ids.bn_var[i])[c],
                    )
                };
                inv_std[c] = T::one() / (var + eps).sqrt();
                let s = inv_std[c];
                row.mapv_inplace(|v| (v - mean) * s);
            }
            if train {
                stats.push(moments);
            }
            let xhat = y.clone();
            let gamma = self.params.v1(self.ids.bn_g[i]);
            let beta = self.params.v1(self.ids.bn_b[i]);
            for (c, mut row) in y.rows_mut().into_iter().enumerate() {
                let (g, b) = (gamma[c], beta[c]);
                row.mapv_inplace(|v| v * g + b);
            }
            let gates = route.gates(y.as_slice().expect("contiguous activations"));
            relu_in_place(y.as_slice_mut().expect("contiguous activations"), &gates);
            let winners = route.winners(|| pool_winners(&y, batch, h, w));
            let pooled = pool_gather(&y, &winners, batch, h, w);
            blocks.push(BlockCache {
                input: std::mem::replace(&mut maps, pooled),
                h,
                w,
                xhat,
                inv_std,
                train,
                gates,
                winners,
            });
            h /= 2;
            w /= 2;
        }

        // mean over the frequency rows, one (batch, channels) matrix per step
        let channels = maps.nrows();
        let xs: Vec<Array2<T>> = (0..w)
            .map(|step| {
                Array2::from_shape_fn((batch, channels), |(b, c)| {
                    (0..h)
                        .map(|r| maps[[c, b * h * w + r * w + step]])
                        .sum::<T>()
                        / T::lit(h as f64)
                })
            })
            .collect();
        let (emb, rnn) = self.rnn_forward(xs);
        Ok((
            emb,
            BackboneCache {
                batch,
                blocks,
                final_hw: (h, w),
                rnn,
            },
            stats,
        ))
    }

    fn rnn_forward(&self, xs: Vec<Array2<T>>) -> (Array2<T>, RnnCache<T>) {
        let hid = self.cfg.rnn_hidden;
        let batch = xs[0].nrows();
        let wih = self.params.m2(self.ids.rnn_wih);
        let whh = self.params.m2(self.ids.rnn_whh);
        let bih = self.params.v1(self.ids.rnn_bih);
        let bhh = self.params.v1(self.ids.rnn_bhh);
        let mut hs = vec![Array2::zeros((batch, hid))];
        let mut acts = Vec::with_capacity(xs.len());
        let mut ghn = Vec::new();
        for x in &xs {
            let hp = hs.last().expect("initial state");
            let gi = x.dot(&wih) + bih;
            let gh = hp.dot(&whh) + bhh;
            match self.cfg.rnn {
                RnnKind::Gru => {
                    let mut act = Array2::zeros((batch, 3 * hid));
                    let mut hn = Array2::zeros((batch, hid));
                    for b in 0..batch {
                        for j in 0..hid {
                            let r = sigmoid(gi[[b, j]] + gh[[b, j]]);
                            let z = sigmoid(gi[[b, hid + j]] + gh[[b, hid + j]]);
                            let n = (gi[[b, 2 * hid + j]] + r * gh[[b, 2 * hid + j]]).tanh();
                            act[[b, j]] = r;
                            act[[b, hid + j]] = z;
                            act[[b, 2 * hid + j]] = n;
                            hn[[b, j]] = (T::one() - z) * n + z * hp[[b, j]];
                        }
                    }
                    ghn.push(gh.slice(s![.., 2 * hid..]).to_owned());
                    acts.push(act);
                    hs.push(hn);
                }
                RnnKind::Tanh => {
                    let hn = (gi + gh).mapv(T::tanh);
                    acts.push(hn.clone());
                    hs.push(hn);
                }
            }
        }
        let emb = match self.cfg.temporal {
            Temporal::Last => hs.last().expect("at least one step").clone(),
            Temporal::Mean => {
                let steps = T::lit(xs.len() as f64);
                hs[1..]
                    .iter()
                    .fold(Array2::zeros((batch, hid)), |acc, h| acc + h)
                    / steps
            }
        };
        (emb, RnnCache { xs, hs, acts, ghn })
    }

    /// Accumulates parameter gradients into `grads`; returns the gradient
    /// with respect to the input batch when `want_input` is set.
    pub(crate) fn backbone_backward(
        &self,
        cache: &BackboneCache<T>,
        d_emb: ArrayView2<T>,
        grads: &mut ParamSet<T>,
        want_input: bool,
    ) -> Option<ndarray::Array3<T>> {
        let batch = cache.batch;
        let d_steps = self.rnn_backward(&cache.rnn, d_emb, grads);
        let (h, w) = cache.final_hw;
        let channels = *self.cfg.channels.last().expect("at least one block");
        let mut d_maps = Array2::<T>::zeros((channels, batch * h * w));
        let inv_h = T::one() / T::lit(h as f64);
        for (step, dx) in d_steps.iter().enumerate() {
            for b in 0..batch {
                for c in 0..channels {
                    let g = dx[[b, c]] * inv_h;
                    for r in 0..h {
                        d_maps[[c, b * h * w + r * w + step]] += g;
                    }
                }
            }
        }

        for (i, blk) in cache.blocks.iter().enumerate().rev() {
            let mut dy = pool_scatter(&d_maps, &blk.winners, batch, blk.h, blk.w);
            relu_in_place(dy.as_slice_mut().expect("contiguous gradient"), &blk.gates);
            let gamma = self.params.v1(self.ids.bn_g[i]).to_owned();
            {
                let mut dg = grads.v1_mut(self.ids.bn_g[i]);
                for c in 0..dy.nrows() {
                    dg[c] += dy
                        .row(c)
                        .iter()
                        .zip(blk.xhat.row(c))
                        .map(|(&a, &b)| a * b)
                        .sum::<T>();
                }
            }
            {
                let mut db = grads.v1_mut(self.ids.bn_b[i]);
                db += &dy.sum_axis(Axis(1));
            }
            for (c, mut row) in dy.rows_mut().into_iter().enumerate() {
                let (g, inv) = (gamma[c], blk.inv_std[c]);
                if blk.train {
                    let n = T::lit(row.len() as f64);
                    let mean_d = row.sum() * g / n;
                    let mean_dx = row
                        .iter()
                        .zip(blk.xhat.row(c))
                        .map(|(&d, &x)| d * x)
                        .sum::<T>()
                        * g
                        / n;
                    row.zip_mut_with(&blk.xhat.row(c), |d, &x| {
                        *d = inv * (*d * g - mean_d - x * mean_dx)
                    });
                } else {
                    row.mapv_inplace(|d| d * g * inv);
                }
            }
            let need = want_input || i > 0;
            let weight = self.params.m2(self.ids.conv[i]).to_owned();
            let mut dweight = grads.m2_mut(self.ids.conv[i]);
            {
                let dx = conv_backward(
                    &blk.input,
                    batch,
                    blk.h,
                    blk.w,
                    weight.view(),
                    &dy,
                    &mut dweight,
                    need,
                )?;
                d_maps = dx
            }
        }
        Some(
            d_maps
                .into_shape_with_order((batch, self.n_mels, self.n_frames))
                .expect("input-shaped gradient"),
        )
    }

    fn rnn_backward(
        &self,
        cache: &RnnCache<T>,
        d_emb: ArrayView2<T>,
        grads: &mut ParamSet<T>,
    ) -> Vec<Array2<T>> {
        let hid = self.cfg.rnn_hidden;
        let steps = cache.xs.len();
        let wih = self.params.m2(self.ids.rnn_wih).to_owned();
        let whh = self.params.m2(self.ids.rnn_whh).to_owned();
        let mut dh = Array2::<T>::zeros(d_emb.raw_dim());
        let per_step = match self.cfg.temporal {
            Temporal::Last => None,
            Temporal::Mean => Some(d_emb.mapv(|v| v / T::lit(steps as f64))),
        };
        let mut d_xs = vec![Array2::zeros((0, 0)); steps];
        for t in (0..steps).rev() {
            match &per_step {
                Some(g) => dh += g,
                None if t == steps - 1 => dh += &d_emb,
                None => {}
            }
            let hp = &cache.hs[t];
            let act = &cache.acts[t];
            let (dgi, dgh, mut dhp) = match self.cfg.rnn {
                RnnKind::Gru => {
                    let r = act.slice(s![.., ..hid]);
                    let z = act.slice(s![.., hid..2 * hid]);
                    let n = act.slice(s![.., 2 * hid..]);
                    let ghn = &cache.ghn[t];
                    let dnpre = ndarray::Zip::from(&dh)
                        .and(&z)
                        .and(&n)
                        .map_collect(|&d, &z, &n| d * (T::one() - z) * (T::one() - n * n));
                    let dzpre = ndarray::Zip::from(&dh)
                        .and(hp)
                        .and(&n)
                        .and(&z)
                        .map_collect(|&d, &h, &n, &z| d * (h - n) * z * (T::one() - z));
                    let drpre = ndarray::Zip::from(&dnpre)
                        .and(ghn)
                        .and(&r)
                        .map_collect(|&d, &g, &r| d * g * r * (T::one() - r));
                    let dgi = concatenate![Axis(1), drpre, dzpre, dnpre];
                    let dgh = concatenate![Axis(1), drpre, dzpre, &dnpre * &r];
                    let dhp = &dh * &z;
                    (dgi, dgh, dhp)
                }
                RnnKind::Tanh => {
                    let dpre = ndarray::Zip::from(&dh)
                        .and(act)
                        .map_collect(|&d, &h| d * (T::one() - h * h));
                    (dpre.clone(), dpre, Array2::zeros(dh.raw_dim()))
                }
            };
            general_mat_mul(
                T::one(),
                &cache.xs[t].t(),
                &dgi,
                T::one(),
                &mut grads.m2_mut(self.ids.rnn_wih),
            );
            general_mat_mul(
                T::one(),
                &hp.t(),
                &dgh,
                T::one(),
                &mut grads.m2_mut(self.ids.rnn_whh),
            );
            {
                let mut b = grads.v1_mut(self.ids.rnn_bih);
                b += &dgi.sum_axis(Axis(0));
            }
            {
                let mut b = grads.v1_mut(self.ids.rnn_bhh);
                b += &dgh.sum_axis(Axis(0));
            }
            d_xs[t] = dgi.dot(&wih.t());
            general_mat_mul(T::one(), &dgh, &whh.t(), T::one(), &mut dhp);
            dh = dhp;
        }
        d_xs
    }
}
