//! One episode's forward and backward pass: embed every view, build
//! prototypes, evaluate the configured objective and push its gradient back
//! through the head, fusion block and backbone.

use ndarray::{concatenate, s, Array2, Array3, Axis};

use crate::audio::{CacheRecord, Spectrogram};
use crate::augment::{augment_views, AugmentConfig};
use crate::data::Episode;
use crate::error::{Error, Result};
use crate::losses::{
    apl_loss, compute_prototypes, cpl_loss, few_shot_loss, mine_triplets, prototypes_backward,
    total_loss, AplConfig, CplConfig, CplNegatives, FsConfig, LossKind, LossReport, Triplet,
};
use crate::nn::{BatchStats, Mode, Model, ParamSet, Real, Route, VIEWS};
use crate::rng;

/// Everything that defines the training objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSetup {
    pub kind: LossKind,
    pub lambda: f64,
    pub fs: FsConfig,
    pub cpl: CplConfig,
    pub apl: AplConfig,
}

impl Default for LossSetup {
    fn default() -> Self {
        Self {
            kind: LossKind::FsApl,
            lambda: 0.3,
            fs: FsConfig::default(),
            cpl: CplConfig::default(),
            apl: AplConfig::default(),
        }
    }
}

impl LossSetup {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::config(
                "loss.lambda",
                "must be finite and non-negative",
            ));
        }
        self.cpl.validate()?;
        self.apl.validate()?;
        if self.kind == LossKind::FsApl && self.apl.negative_weight() == 0.0 {
            log::warn!(
                "apl.alpha_deg = 0: the angular loss ignores which negatives survive mining"
            );
        }
        Ok(())
    }
}

/// Views of one episode stacked for the model: support items first, then
/// queries, `VIEWS` consecutive entries per item (or one when replicated).
#[derive(Debug, Clone)]
pub struct EpisodeBatch<T> {
    pub views: Array3<T>,
    pub replicated: bool,
    pub support_labels: Vec<usize>,
    pub query_labels: Vec<usize>,
    pub n_way: usize,
}

impl<T: Real> EpisodeBatch<T> {
    pub fn n_support(&self) -> usize {
        self.support_labels.len()
    }

    pub fn cast<U: Real>(&self) -> EpisodeBatch<U> {
        EpisodeBatch {
            views: self.views.mapv(|v| U::lit(v.f64())),
            replicated: self.replicated,
            support_labels: self.support_labels.clone(),
            query_labels: self.query_labels.clone(),
            n_way: self.n_way,
        }
    }
}

/// Gathers (and, when `augment` is set, augments) the spectrograms of an
/// episode. Each item draws its augmentations from its own stream keyed by
/// `stream` and its position, so results do not depend on evaluation order.
pub fn build_batch(
    episode: &Episode,
    records: &[CacheRecord],
    aug: &AugmentConfig,
    augment: bool,
    stream: &[u64],
) -> Result<EpisodeBatch<f32>> {
    let items: Vec<_> = episode.support.iter().chain(&episode.query).collect();
    let first = records
        .get(
            items
                .first()
                .ok_or_else(|| Error::EmptyInput("episode has no items".into()))?
                .record,
        )
        .ok_or_else(|| Error::Contract("episode references a missing cache record".into()))?;
    let (f, t) = first.values.dim();
    let replicated = !augment || aug.is_identity();
    let per = if replicated { 1 } else { VIEWS };
    let mut views = Array3::<f32>::zeros((items.len() * per, f, t));
    for (i, item) in items.iter().enumerate() {
        let rec = records
            .get(item.record)
            .ok_or_else(|| Error::Contract("episode references a missing cache record".into()))?;
        if replicated {
            views.index_axis_mut(Axis(0), i).assign(&rec.values);
            continue;
        }
        let spec = Spectrogram::new(rec.values.clone(), true)?;
        let mut path = vec![rng::tag::AUGMENT];
        path.extend_from_slice(stream);
        path.push(i as u64);
        let mut r = rng::stream(aug.seed, &path);
        let out = augment_views(&spec, aug, &mut r)?;
        for (v, view) in out.views.iter().enumerate() {
            views
                .index_axis_mut(Axis(0), i * VIEWS + v)
                .assign(view.values());
        }
    }
    Ok(EpisodeBatch {
        views,
        replicated,
        support_labels: episode.support_labels(),
        query_labels: episode.query_labels(),
        n_way: episode.n_way,
    })
}

/// Fixed random choices for one evaluation of the objective. Replaying the
/// same plan makes the loss a deterministic function of the parameters.
#[derive(Debug, Clone, Default)]
pub struct StepPlan {
    pub negatives: Option<CplNegatives>,
    /// Reuse these triplets instead of mining afresh.
    pub triplets: Option<Vec<Triplet>>,
}

#[derive(Debug)]
pub struct StepOutput<T> {
    pub report: LossReport,
    pub stats: BatchStats,
    /// Triplets used by the angular loss.
    pub triplets: Option<Vec<Triplet>>,
    pub d_input: Option<Array3<T>>,
    /// Projected rows replaced because of zero norm.
    pub degenerate: usize,
}

fn to64<T: Real>(a: &Array2<T>) -> Array2<f64> {
    a.mapv(|v| v.f64())
}

fn from64<T: Real>(a: &Array2<f64>) -> Array2<T> {
    a.mapv(T::lit)
}

/// Evaluates the objective on `batch`. When `grads` is given, parameter
/// gradients are accumulated into it (and the input gradient returned if
/// `want_input`).
#[allow(clippy::too_many_arguments)]
pub fn episode_loss<T: Real>(
    model: &Model<T>,
    batch: &EpisodeBatch<T>,
    setup: &LossSetup,
    plan: &StepPlan,
    mode: Mode,
    route: &mut Route,
    mut grads: Option<&mut ParamSet<T>>,
    want_input: bool,
) -> Result<StepOutput<T>> {
    let n = batch.n_way;
    let ns = batch.support_labels.len();
    let (fused, cache, stats) =
        model.embed_forward(batch.views.view(), batch.replicated, mode, route)?;
    let fused64 = to64(&fused);
    let support = fused64.slice(s![..ns, ..]);
    let query = fused64.slice(s![ns.., ..]);
    let protos = compute_prototypes(support, &batch.support_labels, n)?;
    let fs = few_shot_loss(query, &batch.query_labels, protos.view(), &setup.fs)?;
    let mut d_protos = fs.d_prototypes.clone();
    let mut d_query = fs.d_queries.clone();
    let mut l_cm = 0.0;
    let mut used = None;
    let mut degenerate = 0;

    if setup.kind != LossKind::Fs {
        let lambda = setup.lambda;
        let p_emb = model.project_forward(from64::<T>(&protos).view(), true, route);
        let q_emb = model.project_forward(
            from64::<T>(&query.to_owned()).view(),
            model.config().project_queries,
            route,
        );
        degenerate = p_emb.degenerate + q_emb.degenerate;
        let p_hat = to64(&p_emb.rows);
        let q_hat = to64(&q_emb.rows);
        let (dp_hat, dq_hat) = match setup.kind {
            LossKind::FsCpl => {
                let negatives = plan.negatives.as_ref().ok_or_else(|| {
                    Error::Contract("contrastive loss needs sampled negatives".into())
                })?;
                let out = cpl_loss(p_hat.view(), q_hat.view(), negatives, &setup.cpl)?;
                l_cm = out.loss;
                (out.d_prototypes, out.d_queries)
            }
            _ => {
                let rows = concatenate![Axis(0), p_hat, q_hat];
                let labels: Vec<usize> = (0..n).chain(batch.query_labels.iter().copied()).collect();
                let triplets = match &plan.triplets {
                    Some(t) => t.clone(),
                    None => mine_triplets(
                        rows.view(),
                        &labels,
                        n,
                        setup.apl.alpha_deg,
                        setup.apl.anchor_mode,
                    ),
                };
                let out = apl_loss(rows.view(), &triplets, &setup.apl)?;
                l_cm = out.loss;
                used = Some(triplets);
                (
                    out.d_rows.slice(s![..n, ..]).to_owned(),
                    out.d_rows.slice(s![n.., ..]).to_owned(),
                )
            }
        };
        if let Some(g) = grads.as_deref_mut() {
            let dp = model.project_backward(&p_emb, from64::<T>(&(dp_hat * lambda)).view(), g);
            let dq = model.project_backward(&q_emb, from64::<T>(&(dq_hat * lambda)).view(), g);
            d_protos += &to64(&dp);
            d_query += &to64(&dq);
        }
    }

    let mut report = total_loss(fs.loss, l_cm, setup.lambda);
    report.triplets_mined = used.as_ref().map_or(0, Vec::len);
    if !report.l_total.is_finite() {
        return Err(Error::NonFinite(format!(
            "episode loss l_fs={} l_cm={}",
            report.l_fs, report.l_cm
        )));
    }

    let mut d_input = None;
    if let Some(grads) = grads {
        let d_support = prototypes_backward(d_protos.view(), &batch.support_labels);
        let d_fused = concatenate![Axis(0), d_support, d_query];
        d_input = model.embed_backward(&cache, from64::<T>(&d_fused).view(), grads, want_input);
    }
    Ok(StepOutput {
        report,
        stats,
        triplets: used,
        d_input,
        degenerate,
    })
}
