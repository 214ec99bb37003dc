//! Episodic training, evaluation and the k-shot sweep.

mod eval;
mod optim;
mod step;

pub use eval::{
    evaluate, kshot_sweep, mean_ci95, nearest_prototype, predict_episode, summary_csv, sweep_csv,
    tasks_csv, EpisodeConfig, EvalResult, EvalSetup, SweepReport, SweepRow,
};
pub use optim::{Adam, AdamConfig, MultiStepLr};
pub use step::{build_batch, episode_loss, EpisodeBatch, LossSetup, StepOutput, StepPlan};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::audio::{CacheRecord, GlobalStats};
use crate::augment::AugmentConfig;
use crate::data::{sample_episode, Episode, SplitPool};
use crate::error::{Error, Result};
use crate::losses::{sample_cpl_negatives, LossKind};
use crate::nn::{save_checkpoint, Checkpoint, Mode, Model, Route};
use crate::rng;
use crate::util::atomic_write_str;

pub const TRAIN_LOG: &str = "train_log.csv";
pub const VAL_LOG: &str = "val_log.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.pafs";
pub const NONFINITE_DUMP: &str = "nonfinite_episode.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub schedule: MultiStepLr,
    pub adam: AdamConfig,
    pub episode: EpisodeConfig,
    /// Validation tasks after every epoch (the same tasks each time).
    pub val_episodes: usize,
    pub seed: u64,
    pub loss: LossSetup,
    pub aug: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            episodes_per_epoch: 100,
            schedule: MultiStepLr {
                base: 1e-3,
                milestones: vec![100, 150],
                gamma: 0.1,
            },
            adam: AdamConfig::default(),
            episode: EpisodeConfig::default(),
            val_episodes: 200,
            seed: 0,
            loss: LossSetup::default(),
            aug: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be positive"));
        }
        if self.episodes_per_epoch == 0 {
            return Err(Error::config(
                "train.episodes_per_epoch",
                "must be positive",
            ));
        }
        if self.val_episodes == 0 {
            return Err(Error::config("train.val_episodes", "must be positive"));
        }
        self.schedule.validate()?;
        self.episode.validate()?;
        self.loss.validate()
    }
}

/// Cached spectrograms and the class pools episodes are drawn from.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub records: &'a [CacheRecord],
    pub train: &'a SplitPool,
    pub val: &'a SplitPool,
}

/// Where training writes its files; `dir = None` keeps everything in memory.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub dir: Option<PathBuf>,
    pub config_text: String,
    pub stats: GlobalStats,
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub episode: usize,
    pub l_fs: f64,
    pub l_cm: f64,
    pub l_total: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValRow {
    pub epoch: usize,
    pub accuracy: f64,
    pub ci95: f64,
    /// This epoch became the retained checkpoint.
    pub best: bool,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Parameters from the epoch with the highest validation accuracy.
    pub best: Model<f32>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub log: Vec<LogRow>,
    pub val: Vec<ValRow>,
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from("epoch,episode,l_fs,l_cm,l_total,lr\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.epoch, r.episode, r.l_fs, r.l_cm, r.l_total, r.lr
        );
    }
    s
}

pub fn val_csv(rows: &[ValRow]) -> String {
    let mut s = String::from("epoch,accuracy,ci95,best\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.epoch,
            r.accuracy,
            r.ci95,
            u8::from(r.best)
        );
    }
    s
}

fn dump_episode(dir: &Path, epoch: usize, index: usize, episode: &Episode, message: &str) {
    let mut s = format!(
        "epoch {epoch} episode {index}\n{message}\nclasses {:?}\n",
        episode.classes
    );
    for (name, items) in [("support", &episode.support), ("query", &episode.query)] {
        for it in items.iter() {
            let _ = writeln!(
                s,
                "{name} sample={} record={} label={}",
                it.sample, it.record, it.label
            );
        }
    }
    if let Err(e) = atomic_write_str(&dir.join(NONFINITE_DUMP), &s) {
        log::error!("could not write the diagnostic dump: {e}");
    }
}

/// Validation accuracy of `model` on the fixed validation tasks.
pub fn validate_model(
    model: &Model<f32>,
    cfg: &TrainConfig,
    data: &TrainData,
    workers: usize,
) -> Result<EvalResult> {
    let setup = EvalSetup {
        pool: data.val,
        records: data.records,
        episode: cfg.episode,
        aug: &cfg.aug,
        squared: cfg.loss.fs.squared,
        seed: cfg.seed,
        tag: rng::tag::VAL_EPISODE,
        workers,
    };
    evaluate(model, &setup, cfg.val_episodes)
}

/// Runs the full episodic schedule: one optimizer step per training episode,
/// validation after every epoch, best-validation model retained (a later
/// epoch replaces it only with strictly higher accuracy).
pub fn train(
    mut model: Model<f32>,
    cfg: &TrainConfig,
    data: &TrainData,
    out: &TrainOutputs,
) -> Result<TrainResult> {
    cfg.validate()?;
    cfg.aug
        .validate_for(model.input_shape().0, model.input_shape().1)?;
    let mut adam = Adam::new(model.params(), cfg.adam);
    let mut grads = model.params().zeros_like();
    let mut log_rows = Vec::with_capacity(cfg.epochs * cfg.episodes_per_epoch);
    let mut val_rows = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(Model<f32>, usize, f64)> = None;
    let ep = cfg.episode;

    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr_at(epoch);
        for i in 0..cfg.episodes_per_epoch {
            let path = [epoch as u64, i as u64];
            let mut r = rng::stream(cfg.seed, &[rng::tag::TRAIN_EPISODE, path[0], path[1]]);
            let episode = sample_episode(data.train, ep.n_way, ep.k_shot, ep.q_queries, &mut r)?;
            let batch = build_batch(&episode, data.records, &cfg.aug, true, &path)?;
            let negatives = (cfg.loss.kind == LossKind::FsCpl).then(|| {
                let mut r = rng::stream(cfg.seed, &[rng::tag::CPL_NEGATIVES, path[0], path[1]]);
                sample_cpl_negatives(&batch.query_labels, ep.n_way, cfg.loss.cpl.m, &mut r)
            });
            let plan = StepPlan {
                negatives,
                triplets: None,
            };
            grads.fill_zero();
            let step = episode_loss(
                &model,
                &batch,
                &cfg.loss,
                &plan,
                Mode::Train,
                &mut Route::Free,
                Some(&mut grads),
                false,
            );
            let step = match step {
                Ok(s)
                    if grads
                        .tensors()
                        .iter()
                        .all(|t| t.value.iter().all(|v| v.is_finite())) =>
                {
                    s
                }
                Ok(_) | Err(Error::NonFinite(_)) | Err(Error::Contract(_)) => {
                    let message = match step {
                        Err(e) => e.to_string(),
                        Ok(_) => "non-finite gradient".into(),
                    };
                    if let Some(dir) = &out.dir {
                        dump_episode(dir, epoch + 1, i + 1, &episode, &message);
                    }
                    return Err(Error::NonFinite(format!(
                        "training diverged at epoch {} episode {}: {message}",
                        epoch + 1,
                        i + 1
                    )));
                }
                Err(e) => return Err(e),
            };
            adam.step(model.params_mut(), &grads, lr);
            model.apply_batch_stats(&step.stats);
            let rep = step.report;
            log_rows.push(LogRow {
                epoch: epoch + 1,
                episode: i + 1,
                l_fs: rep.l_fs,
                l_cm: rep.l_cm,
                l_total: rep.l_total,
                lr,
            });
        }

        let val = validate_model(&model, cfg, data, out.workers)?;
        let improved = best.as_ref().is_none_or(|(_, _, acc)| val.mean > *acc);
        if improved {
            best = Some((model.clone(), epoch + 1, val.mean));
            if let Some(dir) = &out.dir {
                let ck = Checkpoint::from_model(
                    &model,
                    out.config_text.clone(),
                    out.stats,
                    (epoch + 1) as u32,
                    val.mean,
                );
                save_checkpoint(&dir.join(CHECKPOINT_FILE), &ck)?;
            }
        }
        let recent = &log_rows[log_rows.len() - cfg.episodes_per_epoch..];
        let mean_loss = recent.iter().map(|r| r.l_total).sum::<f64>() / recent.len() as f64;
        log::info!(
            "epoch {}/{}: loss {:.4}, val acc {:.4} +- {:.4}{}",
            epoch + 1,
            cfg.epochs,
            mean_loss,
            val.mean,
            val.ci95,
            if improved { " (best)" } else { "" }
        );
        val_rows.push(ValRow {
            epoch: epoch + 1,
            accuracy: val.mean,
            ci95: val.ci95,
            best: improved,
        });
    }

    if let Some(dir) = &out.dir {
        atomic_write_str(&dir.join(TRAIN_LOG), &log_csv(&log_rows))?;
        atomic_write_str(&dir.join(VAL_LOG), &val_csv(&val_rows))?;
    }
    let (best, best_epoch, best_val) = best.expect("at least one epoch");
    Ok(TrainResult {
        best,
        best_epoch,
        best_val,
        log: log_rows,
        val: val_rows,
    })
}
