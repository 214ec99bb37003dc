use ndarray::{Array1, Array2, Array3, ArrayD, ArrayView2, ArrayView3, Axis, IxDyn};
use rand::Rng as _;

use super::backbone::{BackboneCache, BlockStats};
use super::fusion::FusionCache;
use super::head::HeadCache;
use super::{ModelConfig, ParamSet, Real, Route, VIEWS};
use crate::error::{Error, Result};
use crate::rng;

/// Normalization behaviour of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running estimates are reported for an update.
    Train,
    /// Frozen running statistics, so outputs do not depend on the batch.
    Eval,
}

/// Batch moments from a training-mode pass, one entry per conv block.
#[derive(Debug, Clone, Default)]
pub struct BatchStats(pub Vec<BlockStats>);

#[derive(Debug, Clone)]
pub(crate) struct Ids {
    pub conv: Vec<usize>,
    pub bn_g: Vec<usize>,
    pub bn_b: Vec<usize>,
    pub bn_mean: Vec<usize>,
    pub bn_var: Vec<usize>,
    pub rnn_wih: usize,
    pub rnn_whh: usize,
    pub rnn_bih: usize,
    pub rnn_bhh: usize,
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub p1: usize,
    pub pb1: usize,
    pub p2: usize,
    pub pb2: usize,
}

/// Name, shape and fan-in (zero for constant initialization) of every
/// trainable tensor, in storage order.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut out = Vec::new();
    let mut cin = 1;
    for (i, &c) in cfg.channels.iter().enumerate() {
        out.push((
            format!("conv{i}.weight"),
            vec![c, cin * 9],
            Init::Uniform(cin * 9),
        ));
        out.push((format!("bn{i}.gamma"), vec![c], Init::One));
        out.push((format!("bn{i}.beta"), vec![c], Init::Zero));
        cin = c;
    }
    let h = cfg.rnn_hidden;
    let g = cfg.rnn.gates() * h;
    out.push(("rnn.w_ih".into(), vec![cin, g], Init::Uniform(h)));
    out.push(("rnn.w_hh".into(), vec![h, g], Init::Uniform(h)));
    out.push(("rnn.b_ih".into(), vec![g], Init::Zero));
    out.push(("rnn.b_hh".into(), vec![g], Init::Zero));
    let d = h;
    out.push(("fusion.ln1.gamma".into(), vec![d], Init::One));
    out.push(("fusion.ln1.beta".into(), vec![d], Init::Zero));
    for name in ["q", "k", "v", "o"] {
        out.push((
            format!("fusion.{name}.weight"),
            vec![d, d],
            Init::Uniform(d),
        ));
        out.push((format!("fusion.{name}.bias"), vec![d], Init::Zero));
    }
    out.push(("fusion.ln2.gamma".into(), vec![d], Init::One));
    out.push(("fusion.ln2.beta".into(), vec![d], Init::Zero));
    out.push((
        "fusion.ff1.weight".into(),
        vec![d, cfg.ff_dim],
        Init::Uniform(d),
    ));
    out.push(("fusion.ff1.bias".into(), vec![cfg.ff_dim], Init::Zero));
    out.push((
        "fusion.ff2.weight".into(),
        vec![cfg.ff_dim, d],
        Init::Uniform(cfg.ff_dim),
    ));
    out.push(("fusion.ff2.bias".into(), vec![d], Init::Zero));
    let f = cfg.fused_dim();
    out.push((
        "head.fc1.weight".into(),
        vec![f, cfg.proj_hidden],
        Init::Uniform(f),
    ));
    out.push(("head.fc1.bias".into(), vec![cfg.proj_hidden], Init::Zero));
    out.push((
        "head.fc2.weight".into(),
        vec![cfg.proj_hidden, cfg.proj_out],
        Init::Uniform(cfg.proj_hidden),
    ));
    out.push(("head.fc2.bias".into(), vec![cfg.proj_out], Init::Zero));
    out
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Zero,
    One,
    Uniform(usize),
}

fn buffer_layout(cfg: &ModelConfig) -> Vec<(String, usize, f64)> {
    cfg.channels
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| {
            [
                (format!("bn{i}.running_mean"), c, 0.0),
                (format!("bn{i}.running_var"), c, 1.0),
            ]
        })
        .collect()
}

impl Ids {
    fn resolve<T: Real>(
        cfg: &ModelConfig,
        params: &ParamSet<T>,
        buffers: &ParamSet<T>,
    ) -> Result<Self> {
        let p = |name: &str| {
            params
                .find(name)
                .ok_or_else(|| Error::Format(format!("missing parameter `{name}`")))
        };
        let b = |name: &str| {
            buffers
                .find(name)
                .ok_or_else(|| Error::Format(format!("missing buffer `{name}`")))
        };
        let blocks = 0..cfg.channels.len();
        Ok(Ids {
            conv: blocks
                .clone()
                .map(|i| p(&format!("conv{i}.weight")))
                .collect::<Result<_>>()?,
            bn_g: blocks
                .clone()
                .map(|i| p(&format!("bn{i}.gamma")))
                .collect::<Result<_>>()?,
            bn_b: blocks
                .clone()
                .map(|i| p(&format!("bn{i}.beta")))
                .collect::<Result<_>>()?,
            bn_mean: blocks
                .clone()
                .map(|i| b(&format!("bn{i}.running_mean")))
                .collect::<Result<_>>()?,
            bn_var: blocks
                .map(|i| b(&format!("bn{i}.running_var")))
                .collect::<Result<_>>()?,
            rnn_wih: p("rnn.w_ih")?,
            rnn_whh: p("rnn.w_hh")?,
            rnn_bih: p("rnn.b_ih")?,
            rnn_bhh: p("rnn.b_hh")?,
            ln1_g: p("fusion.ln1.gamma")?,
            ln1_b: p("fusion.ln1.beta")?,
            wq: p("fusion.q.weight")?,
            bq: p("fusion.q.bias")?,
            wk: p("fusion.k.weight")?,
            bk: p("fusion.k.bias")?,
            wv: p("fusion.v.weight")?,
            bv: p("fusion.v.bias")?,
            wo: p("fusion.o.weight")?,
            bo: p("fusion.o.bias")?,
            ln2_g: p("fusion.ln2.gamma")?,
            ln2_b: p("fusion.ln2.beta")?,
            w1: p("fusion.ff1.weight")?,
            b1: p("fusion.ff1.bias")?,
            w2: p("fusion.ff2.weight")?,
            b2: p("fusion.ff2.bias")?,
            p1: p("head.fc1.weight")?,
            pb1: p("head.fc1.bias")?,
            p2: p("head.fc2.weight")?,
            pb2: p("head.fc2.bias")?,
        })
    }
}

/// The full embedding network: backbone, fusion block and projection head,
/// plus the running statistics of its batch-norm layers.
#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    pub(crate) cfg: ModelConfig,
    pub(crate) n_mels: usize,
    pub(crate) n_frames: usize,
    pub(crate) params: ParamSet<T>,
    pub(crate) buffers: ParamSet<T>,
    pub(crate) ids: Ids,
}

/// Intermediate values of [`Model::embed_forward`] needed for the backward
/// pass.
pub struct EmbedCache<T> {
    replicated: bool,
    backbone: BackboneCache<T>,
    fusion: FusionCache<T>,
}

/// Output of the projection stage together with its backward cache.
pub struct Embedded<T> {
    pub rows: Array2<T>,
    /// Rows whose projection had zero norm and were replaced by `e_1`.
    pub degenerate: usize,
    pub(crate) cache: HeadCache<T>,
}

impl<T: Real> Model<T> {
    /// Fresh model for `n_mels x n_frames` inputs. Weights are drawn
    /// uniformly in `+-1/sqrt(fan_in)`, biases start at zero.
    pub fn new(cfg: ModelConfig, n_mels: usize, n_frames: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        cfg.validate_input(n_mels, n_frames)?;
        let mut rng = rng::stream(seed, &[rng::tag::INIT]);
        let mut params = ParamSet::new();
        for (name, shape, init) in layout(&cfg) {
            let value = match init {
                Init::Zero => ArrayD::zeros(IxDyn(&shape)),
                Init::One => ArrayD::ones(IxDyn(&shape)),
                Init::Uniform(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    ArrayD::from_shape_simple_fn(IxDyn(&shape), || {
                        T::lit(rng.random_range(-bound..bound))
                    })
                }
            };
            params.push(name, value);
        }
        let mut buffers = ParamSet::new();
        for (name, len, fill) in buffer_layout(&cfg) {
            buffers.push(name, ArrayD::from_elem(IxDyn(&[len]), T::lit(fill)));
        }
        Self::from_parts(cfg, n_mels, n_frames, params, buffers)
    }

    /// Assembles a model from stored tensors, checking every name and shape
    /// against the configuration.
    pub fn from_parts(
        cfg: ModelConfig,
        n_mels: usize,
        n_frames: usize,
        params: ParamSet<T>,
        buffers: ParamSet<T>,
    ) -> Result<Self> {
        cfg.validate()?;
        cfg.validate_input(n_mels, n_frames)?;
        let expected = layout(&cfg);
        if expected.len() != params.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape, _), t) in expected.iter().zip(params.tensors()) {
            if &t.name != name || t.value.shape() != shape.as_slice() {
                return Err(Error::Format(format!(
                    "parameter `{}` {:?} does not match expected `{name}` {shape:?}",
                    t.name,
                    t.value.shape()
                )));
            }
        }
        let expected = buffer_layout(&cfg);
        if expected.len() != buffers.len() {
            return Err(Error::Format("batch-norm buffer count mismatch".into()));
        }
        for ((name, len, _), t) in expected.iter().zip(buffers.tensors()) {
            if &t.name != name || t.value.shape() != [*len] {
                return Err(Error::Format(format!(
                    "buffer `{}` does not match `{name}`",
                    t.name
                )));
            }
        }
        let ids = Ids::resolve(&cfg, &params, &buffers)?;
        Ok(Self {
            cfg,
            n_mels,
            n_frames,
            params,
            buffers,
            ids,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// `(n_mels, n_frames)` expected by the backbone.
    pub fn input_shape(&self) -> (usize, usize) {
        (self.n_mels, self.n_frames)
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn buffers(&self) -> &ParamSet<T> {
        &self.buffers
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            cfg: self.cfg.clone(),
            n_mels: self.n_mels,
            n_frames: self.n_frames,
            params: self.params.cast(),
            buffers: self.buffers.cast(),
            ids: self.ids.clone(),
        }
    }

    /// Folds training batch moments into the running statistics with the
    /// configured momentum.
    pub fn apply_batch_stats(&mut self, stats: &BatchStats) {
        let m = self.cfg.bn_momentum;
        for (i, (mean, var)) in stats.0.iter().enumerate() {
            let mut rm = self.buffers.v1_mut(self.ids.bn_mean[i]);
            rm.zip_mut_with(mean, |r, &b| *r = T::lit((1.0 - m) * r.f64() + m * b));
            let mut rv = self.buffers.v1_mut(self.ids.bn_var[i]);
            rv.zip_mut_with(var, |r, &b| *r = T::lit((1.0 - m) * r.f64() + m * b));
        }
    }

    /// Sets the fusion block to its degenerate identity: value projection
    /// identity, output projection and feed-forward weights zero. The fused
    /// vector then equals the concatenated view embeddings.
    pub fn set_fusion_identity(&mut self) {
        let ids = self.ids.clone();
        let d = self.cfg.rnn_hidden;
        self.params.m2_mut(ids.wv).assign(&Array2::eye(d));
        for id in [ids.wo, ids.w1, ids.w2] {
            self.params.get_mut(id).fill(T::zero());
        }
        for id in [ids.bq, ids.bk, ids.bv, ids.bo, ids.b1, ids.b2] {
            self.params.get_mut(id).fill(T::zero());
        }
    }

    /// Backbone alone: one `D`-dim row per input spectrogram.
    pub fn backbone(&self, views: ArrayView3<T>, mode: Mode) -> Result<Array2<T>> {
        Ok(self.backbone_forward(views, mode, &mut Route::Free)?.0)
    }

    /// Fusion alone over groups of four view embeddings.
    pub fn fuse(&self, tokens: ArrayView2<T>) -> Result<Array2<T>> {
        Ok(self.fusion_forward(tokens, &mut Route::Free)?.0)
    }

    /// Backbone and fusion over a stack of views, `VIEWS` consecutive
    /// entries per sample. With `replicated`, the stack holds one view per
    /// sample standing for four identical views; batch statistics are the
    /// same either way, so this only saves compute.
    pub fn embed_forward(
        &self,
        views: ArrayView3<T>,
        replicated: bool,
        mode: Mode,
        route: &mut Route,
    ) -> Result<(Array2<T>, EmbedCache<T>, BatchStats)> {
        if !replicated && !views.len_of(Axis(0)).is_multiple_of(VIEWS) {
            return Err(Error::Contract(format!(
                "view stack must hold {VIEWS} views per sample"
            )));
        }
        let (emb, backbone, stats) = self.backbone_forward(views, mode, route)?;
        let tokens = if replicated {
            let d = emb.ncols();
            Array2::from_shape_fn((emb.nrows() * VIEWS, d), |(r, c)| emb[[r / VIEWS, c]])
        } else {
            emb
        };
        let (fused, fusion) = self.fusion_forward(tokens.view(), route)?;
        Ok((
            fused,
            EmbedCache {
                replicated,
                backbone,
                fusion,
            },
            BatchStats(stats),
        ))
    }

    /// Inference embedding of a view stack (see [`Model::embed_forward`]).
    pub fn embed(&self, views: ArrayView3<T>, replicated: bool) -> Result<Array2<T>> {
        Ok(self
            .embed_forward(views, replicated, Mode::Eval, &mut Route::Free)?
            .0)
    }

    /// Accumulates parameter gradients for `d_fused`; returns the input
    /// gradient when asked.
    pub fn embed_backward(
        &self,
        cache: &EmbedCache<T>,
        d_fused: ArrayView2<T>,
        grads: &mut ParamSet<T>,
        want_input: bool,
    ) -> Option<Array3<T>> {
        let d_tokens = self.fusion_backward(&cache.fusion, d_fused, grads);
        let d_emb = if cache.replicated {
            let d = d_tokens.ncols();
            let samples = d_tokens.nrows() / VIEWS;
            d_tokens
                .into_shape_with_order((samples, VIEWS, d))
                .expect("contiguous")
                .sum_axis(Axis(1))
        } else {
            d_tokens
        };
        self.backbone_backward(&cache.backbone, d_emb.view(), grads, want_input)
    }

    /// Projection head plus normalization (or normalization alone when
    /// `through_head` is false).
    pub fn project_forward(
        &self,
        fused: ArrayView2<T>,
        through_head: bool,
        route: &mut Route,
    ) -> Embedded<T> {
        let (rows, cache, degenerate) = if through_head {
            self.head_forward(fused, route)
        } else {
            self.norm_only_forward(fused)
        };
        if degenerate > 0 {
            log::warn!("{degenerate} projected rows had zero norm and were replaced by e1");
        }
        Embedded {
            rows,
            degenerate,
            cache,
        }
    }

    pub fn project(&self, fused: ArrayView2<T>) -> Array2<T> {
        self.project_forward(fused, true, &mut Route::Free).rows
    }

    pub fn project_backward(
        &self,
        embedded: &Embedded<T>,
        d_rows: ArrayView2<T>,
        grads: &mut ParamSet<T>,
    ) -> Array2<T> {
        self.head_backward(&embedded.cache, d_rows, grads)
    }

    /// Inference-mode batch-norm statistics as `(mean, var)` per block.
    pub fn running_stats(&self) -> Vec<(Array1<T>, Array1<T>)> {
        (0..self.cfg.channels.len())
            .map(|i| {
                (
                    self.buffers.v1(self.ids.bn_mean[i]).to_owned(),
                    self.buffers.v1(self.ids.bn_var[i]).to_owned(),
                )
            })
            .collect()
    }
}
