//! Finite-difference verification of every analytic gradient: the three
//! losses on their own, and the full embedding-plus-loss composition with
//! respect to model parameters and input spectrograms.

use ndarray::{Array2, Array3};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::losses::{
    apl_loss, compute_prototypes, cpl_loss, few_shot_loss, mine_triplets, prototypes_backward,
    sample_cpl_negatives, triplet_angle_deg, AnchorMode, AplConfig, CplConfig, FsConfig, LossKind,
};
use crate::nn::{Mode, Model, ModelConfig, RnnKind, Route, Temporal};
use crate::oracle::{
    finite_diff_gradient, finite_diff_gradient_five_point, GradCheckReport, DEFAULT_FD_STEP,
    FIVE_POINT_STEP,
};
use crate::rng;
use crate::train::{episode_loss, EpisodeBatch, LossSetup, StepPlan};

/// Instances closer than this to a mining threshold are skipped.
pub const BOUNDARY_MARGIN_DEG: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckSettings {
    pub instances: usize,
    pub seed: u64,
    /// Central-difference step for the loss checks.
    pub step: f64,
    /// Five-point step for the network checks. Their gradients span many
    /// orders of magnitude, and at `step` the smallest ones sink below the
    /// round-off of the loss.
    pub model_step: f64,
    /// Coordinates probed per parameter tensor in the model checks.
    pub coords_per_tensor: usize,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        Self {
            instances: 20,
            seed: 0,
            step: DEFAULT_FD_STEP,
            model_step: FIVE_POINT_STEP,
            coords_per_tensor: 3,
        }
    }
}

/// Reports plus the number of instances skipped at a non-differentiable
/// point: near a mining boundary, or with a zero-norm projection.
#[derive(Debug, Clone, Default)]
pub struct GradCheckSummary {
    pub reports: Vec<GradCheckReport>,
    pub skipped: usize,
}

impl GradCheckSummary {
    pub fn passed(&self) -> bool {
        !self.reports.is_empty() && self.reports.iter().all(|r| r.passed)
    }
}

fn gaussian(rng: &mut rng::Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn unit_rows(mut a: Array2<f64>) -> Array2<f64> {
    for mut row in a.rows_mut() {
        let n = row.dot(&row).sqrt();
        row.mapv_inplace(|v| v / n);
    }
    a
}

fn class_major(n: usize, per: usize) -> Vec<usize> {
    (0..n).flat_map(|c| std::iter::repeat_n(c, per)).collect()
}

fn reshape(flat: &[f64], rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), flat.to_vec()).expect("flat length")
}

/// Loss-level checks with respect to every input row.
pub fn check_losses(settings: &GradCheckSettings) -> Result<GradCheckSummary> {
    let mut fs_parts = Vec::new();
    let mut cpl_parts = Vec::new();
    let mut apl_parts = Vec::new();
    let mut skipped = 0;
    let h = settings.step;
    for inst in 0..settings.instances {
        let mut r = rng::stream(settings.seed, &[0x6763_6c73, inst as u64]);
        let n = r.random_range(2..=5);
        let k = r.random_range(1..=5);
        let q = r.random_range(1..=5);
        let dim = r.random_range(2..=8);
        let s_labels = class_major(n, k);
        let q_labels = class_major(n, q);

        // few-shot loss through the prototypes
        let support = gaussian(&mut r, n * k, dim);
        let query = gaussian(&mut r, n * q, dim);
        let fs_cfg = FsConfig {
            squared: inst % 4 != 3,
            ..Default::default()
        };
        let eval_fs = |s: &Array2<f64>, qy: &Array2<f64>| -> Result<_> {
            let p = compute_prototypes(s.view(), &s_labels, n)?;
            few_shot_loss(qy.view(), &q_labels, p.view(), &fs_cfg)
        };
        let out = eval_fs(&support, &query)?;
        let d_support = prototypes_backward(out.d_prototypes.view(), &s_labels);
        let mut x: Vec<f64> = support.iter().chain(query.iter()).copied().collect();
        let split = support.len();
        let numeric = finite_diff_gradient(
            |v| {
                let s = reshape(&v[..split], n * k, dim);
                let qy = reshape(&v[split..], n * q, dim);
                eval_fs(&s, &qy).map(|o| o.loss).unwrap_or(f64::NAN)
            },
            &x,
            h,
        );
        let analytic: Vec<f64> = d_support
            .iter()
            .chain(out.d_queries.iter())
            .copied()
            .collect();
        fs_parts.push(GradCheckReport::compare("fs", &analytic, &numeric, h));

        // contrastive loss with replayed negatives
        let protos = unit_rows(gaussian(&mut r, n, dim));
        let queries = unit_rows(gaussian(&mut r, n * q, dim));
        let m = r.random_range(1..=(n - 1) * q);
        let negatives = sample_cpl_negatives(&q_labels, n, m, &mut r);
        let cfg = CplConfig {
            temperature: [0.1, 0.5, 1.0][inst % 3],
            m,
        };
        let out = cpl_loss(protos.view(), queries.view(), &negatives, &cfg)?;
        x = protos.iter().chain(queries.iter()).copied().collect();
        let split = protos.len();
        let numeric = finite_diff_gradient(
            |v| {
                let p = reshape(&v[..split], n, dim);
                let qy = reshape(&v[split..], n * q, dim);
                cpl_loss(p.view(), qy.view(), &negatives, &cfg)
                    .map(|o| o.loss)
                    .unwrap_or(f64::NAN)
            },
            &x,
            h,
        );
        let analytic: Vec<f64> = out
            .d_prototypes
            .iter()
            .chain(out.d_queries.iter())
            .copied()
            .collect();
        cpl_parts.push(GradCheckReport::compare("cpl", &analytic, &numeric, h));

        // angular loss with frozen mining
        let rows = unit_rows(gaussian(&mut r, n + n * q, dim));
        let labels: Vec<usize> = (0..n).chain(q_labels.iter().copied()).collect();
        let cfg = AplConfig {
            alpha_deg: [0.0, 15.0, 30.0, 45.0][inst % 4],
            anchor_mode: if inst % 2 == 0 {
                AnchorMode::Prototypes
            } else {
                AnchorMode::All
            },
        };
        if near_boundary(&rows, &labels, cfg.alpha_deg) {
            skipped += 1;
            continue;
        }
        let triplets = mine_triplets(rows.view(), &labels, n, cfg.alpha_deg, cfg.anchor_mode);
        let out = apl_loss(rows.view(), &triplets, &cfg)?;
        let (nr, nc) = rows.dim();
        let numeric = finite_diff_gradient(
            |v| {
                apl_loss(reshape(v, nr, nc).view(), &triplets, &cfg)
                    .map(|o| o.loss)
                    .unwrap_or(f64::NAN)
            },
            rows.as_slice().expect("contiguous"),
            h,
        );
        apl_parts.push(GradCheckReport::compare(
            "apl",
            out.d_rows.as_slice().expect("contiguous"),
            &numeric,
            h,
        ));
    }
    Ok(GradCheckSummary {
        reports: vec![
            GradCheckReport::merge("loss/fs", &fs_parts),
            GradCheckReport::merge("loss/cpl", &cpl_parts),
            GradCheckReport::merge("loss/apl", &apl_parts),
        ],
        skipped,
    })
}

fn near_boundary(rows: &Array2<f64>, labels: &[usize], alpha: f64) -> bool {
    for a in 0..rows.nrows() {
        for p in 0..rows.nrows() {
            if a == p || labels[a] != labels[p] {
                continue;
            }
            for n in 0..rows.nrows() {
                if labels[n] != labels[a]
                    && (triplet_angle_deg(rows.row(a), rows.row(p), rows.row(n)) - alpha).abs()
                        < BOUNDARY_MARGIN_DEG
                {
                    return true;
                }
            }
        }
    }
    false
}

/// Small network used by the composition checks.
pub fn tiny_model_config(variant: usize) -> ModelConfig {
    let project_queries = variant % 3 != 2;
    ModelConfig {
        channels: vec![3; 4],
        rnn_hidden: 4,
        rnn: if variant.is_multiple_of(2) {
            RnnKind::Gru
        } else {
            RnnKind::Tanh
        },
        temporal: if variant % 4 < 2 {
            Temporal::Last
        } else {
            Temporal::Mean
        },
        ff_dim: 6,
        proj_hidden: 5,
        proj_out: if project_queries { 3 } else { 16 },
        project_queries,
        ..Default::default()
    }
}

const TINY_INPUT: (usize, usize) = (16, 32);

/// Composition checks: gradient of the episode objective with respect to a
/// sample of coordinates in every parameter tensor and in the input views.
pub fn check_model(settings: &GradCheckSettings) -> Result<GradCheckSummary> {
    let kinds = [LossKind::Fs, LossKind::FsCpl, LossKind::FsApl];
    let mut parts: Vec<Vec<GradCheckReport>> = vec![Vec::new(); kinds.len()];
    let h = settings.model_step;
    let (f, t) = TINY_INPUT;
    let mut skipped = 0;
    let mut inst = 0;
    let mut attempt = 0u64;
    'instances: while inst < settings.instances {
        let mut r = rng::stream(settings.seed, &[0x6763_6d64, inst as u64, attempt]);
        let model_seed = settings
            .seed
            .wrapping_add(inst as u64)
            .wrapping_add(attempt.wrapping_mul(7919));
        attempt += 1;
        let model = Model::<f64>::new(tiny_model_config(inst), f, t, model_seed)?;
        let mut reports = Vec::with_capacity(kinds.len());
        let (n, k, q) = (3, 2, 2);
        let items = n * (k + q);
        let views =
            Array3::from_shape_simple_fn((items * 4, f, t), || r.sample::<f64, _>(StandardNormal));
        let batch = EpisodeBatch {
            views,
            replicated: false,
            support_labels: class_major(n, k),
            query_labels: class_major(n, q),
            n_way: n,
        };
        for (slot, &kind) in kinds.iter().enumerate() {
            let setup = LossSetup {
                kind,
                lambda: 0.3 + 0.4 * r.random::<f64>(),
                apl: AplConfig {
                    alpha_deg: [0.0, 15.0, 30.0, 45.0][inst % 4],
                    anchor_mode: if inst % 2 == 0 {
                        AnchorMode::All
                    } else {
                        AnchorMode::Prototypes
                    },
                },
                cpl: CplConfig {
                    temperature: 0.5,
                    m: 3,
                },
                ..Default::default()
            };
            let mut plan = StepPlan {
                negatives: Some(sample_cpl_negatives(
                    &batch.query_labels,
                    n,
                    setup.cpl.m,
                    &mut r,
                )),
                triplets: None,
            };
            let mut route = Route::record();
            let mut grads = model.params().zeros_like();
            let out = episode_loss(
                &model,
                &batch,
                &setup,
                &plan,
                Mode::Train,
                &mut route,
                Some(&mut grads),
                true,
            )?;
            if out.degenerate > 0 {
                // a zero-norm projection has no gradient; draw a fresh instance
                skipped += 1;
                continue 'instances;
            }
            plan.triplets = out.triplets.clone();
            let route = route.into_replay();
            let d_input = out.d_input.expect("input gradient requested");

            let eval = |m: &Model<f64>, b: &EpisodeBatch<f64>| -> f64 {
                let mut rt = route.clone();
                episode_loss(m, b, &setup, &plan, Mode::Train, &mut rt, None, false)
                    .map(|o| o.report.l_total)
                    .unwrap_or(f64::NAN)
            };

            let mut analytic = Vec::new();
            let mut numeric = Vec::new();
            for (ti, tensor) in model.params().tensors().iter().enumerate() {
                let len = tensor.value.len();
                for _ in 0..settings.coords_per_tensor.min(len) {
                    let j = r.random_range(0..len);
                    let base = tensor.value.as_slice().expect("contiguous")[j];
                    let fd = finite_diff_gradient_five_point(
                        |x| {
                            let mut m = model.clone();
                            m.params_mut().tensors_mut()[ti]
                                .value
                                .as_slice_mut()
                                .expect("contiguous")[j] = x[0];
                            eval(&m, &batch)
                        },
                        &[base],
                        h,
                    );
                    analytic.push(grads.tensors()[ti].value.as_slice().expect("contiguous")[j]);
                    numeric.push(fd[0]);
                }
            }
            for _ in 0..settings.coords_per_tensor * 2 {
                let j = r.random_range(0..batch.views.len());
                let base = batch.views.as_slice().expect("contiguous")[j];
                let fd = finite_diff_gradient_five_point(
                    |x| {
                        let mut b = batch.clone();
                        b.views.as_slice_mut().expect("contiguous")[j] = x[0];
                        eval(&model, &b)
                    },
                    &[base],
                    h,
                );
                analytic.push(d_input.as_slice().expect("contiguous")[j]);
                numeric.push(fd[0]);
            }
            reports.push((
                slot,
                GradCheckReport::compare(kind.as_str(), &analytic, &numeric, h),
            ));
        }
        for (slot, report) in reports {
            parts[slot].push(report);
        }
        inst += 1;
        attempt = 0;
    }
    Ok(GradCheckSummary {
        reports: kinds
            .iter()
            .zip(&parts)
            .map(|(k, p)| GradCheckReport::merge(format!("model/{}", k.as_str()), p))
            .collect(),
        skipped,
    })
}

pub fn run_all(settings: &GradCheckSettings) -> Result<GradCheckSummary> {
    let mut losses = check_losses(settings)?;
    let model = check_model(settings)?;
    losses.reports.extend(model.reports);
    losses.skipped += model.skipped;
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_runs_pass() {
        let s = GradCheckSettings {
            instances: 4,
            coords_per_tensor: 2,
            ..Default::default()
        };
        let out = run_all(&s).unwrap();
        for r in &out.reports {
            assert!(r.passed, "{r:?}");
        }
    }
}
