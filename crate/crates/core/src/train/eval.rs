use ndarray::{s, ArrayView2};
use rayon::prelude::*;

use super::step::{build_batch, EpisodeBatch};
use crate::audio::CacheRecord;
use crate::augment::AugmentConfig;
use crate::data::{sample_episode, SplitPool};
use crate::error::{Error, Result};
use crate::losses::{compute_prototypes, distances};
use crate::nn::Model;
use crate::rng;

/// Shape of an n-way k-shot task with `q_queries` queries per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_queries: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            n_way: 5,
            k_shot: 5,
            q_queries: 5,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 {
            return Err(Error::config("episode.n_way", "need at least two classes"));
        }
        if self.k_shot == 0 {
            return Err(Error::config("episode.k_shot", "must be positive"));
        }
        if self.q_queries == 0 {
            return Err(Error::config("episode.q_queries", "must be positive"));
        }
        Ok(())
    }
}

/// Accuracy over a set of evaluation tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub n_tasks: usize,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// `1.96 * s / sqrt(n)` with `s` the sample standard deviation.
    pub ci95: f64,
}

/// Mean and 95% half-width of `values`; a single value has zero width.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

impl EvalResult {
    pub fn from_accuracies(accuracies: Vec<f64>) -> Result<Self> {
        if accuracies.is_empty() {
            return Err(Error::EmptyInput("no evaluation tasks".into()));
        }
        let (mean, ci95) = mean_ci95(&accuracies);
        Ok(Self {
            n_tasks: accuracies.len(),
            accuracies,
            mean,
            ci95,
        })
    }
}

/// Index of the smallest entry per row; the lowest index wins ties.
pub fn nearest_prototype(dist: ArrayView2<f64>) -> Vec<usize> {
    dist.rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(
                    (0, f64::INFINITY),
                    |best, (c, &d)| if d < best.1 { (c, d) } else { best },
                )
                .0
        })
        .collect()
}

/// Predicted episode-local label of every query (inference mode).
pub fn predict_episode(
    model: &Model<f32>,
    batch: &EpisodeBatch<f32>,
    squared: bool,
) -> Result<Vec<usize>> {
    let fused = model
        .embed(batch.views.view(), batch.replicated)?
        .mapv(f64::from);
    let ns = batch.n_support();
    let protos = compute_prototypes(
        fused.slice(s![..ns, ..]),
        &batch.support_labels,
        batch.n_way,
    )?;
    let d = distances(fused.slice(s![ns.., ..]), protos.view(), squared)?;
    Ok(nearest_prototype(d.view()))
}

/// Where evaluation tasks come from and how they are embedded.
#[derive(Debug, Clone, Copy)]
pub struct EvalSetup<'a> {
    pub pool: &'a SplitPool,
    pub records: &'a [CacheRecord],
    pub episode: EpisodeConfig,
    pub aug: &'a AugmentConfig,
    /// Squared Euclidean distance for the nearest-prototype rule.
    pub squared: bool,
    pub seed: u64,
    /// Stream tag separating validation from test draws.
    pub tag: u64,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
}

fn task_accuracy(model: &Model<f32>, setup: &EvalSetup, task: usize) -> Result<f64> {
    let ep = setup.episode;
    let mut r = rng::stream(setup.seed, &[setup.tag, task as u64]);
    let episode = sample_episode(setup.pool, ep.n_way, ep.k_shot, ep.q_queries, &mut r)?;
    let batch = build_batch(
        &episode,
        setup.records,
        setup.aug,
        setup.aug.eval_augment,
        &[setup.tag, task as u64],
    )?;
    let predicted = predict_episode(model, &batch, setup.squared)?;
    let correct = predicted
        .iter()
        .zip(&batch.query_labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / predicted.len() as f64)
}

/// Mean accuracy over `n_tasks` independently drawn tasks. Each task has
/// its own RNG stream, so the result does not depend on `workers`.
pub fn evaluate(model: &Model<f32>, setup: &EvalSetup, n_tasks: usize) -> Result<EvalResult> {
    setup.episode.validate()?;
    let run = || -> Result<Vec<f64>> {
        (0..n_tasks)
            .into_par_iter()
            .map(|t| task_accuracy(model, setup, t))
            .collect()
    };
    let accuracies = if setup.workers == 0 {
        run()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(setup.workers)
            .build()
            .map_err(|e| Error::Contract(format!("thread pool: {e}")))?
            .install(run)?
    };
    EvalResult::from_accuracies(accuracies)
}

/// One row of a k-shot sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub shots: usize,
    pub mean: f64,
    pub ci95: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    /// `(shots, seed, result)` for every evaluation run.
    pub runs: Vec<(usize, u64, EvalResult)>,
    /// Per shot count: the single run's task CI, or with several seeds the
    /// mean of the per-seed means and the CI across seeds.
    pub rows: Vec<SweepRow>,
}

pub fn kshot_sweep(
    model: &Model<f32>,
    setup: &EvalSetup,
    shots: &[usize],
    n_tasks: usize,
    seeds: &[u64],
) -> Result<SweepReport> {
    if shots.is_empty() || seeds.is_empty() {
        return Err(Error::config(
            "eval.shots",
            "need at least one shot count and one seed",
        ));
    }
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for &k in shots {
        if k == 0 {
            return Err(Error::config("eval.shots", "shot counts must be positive"));
        }
        let mut means = Vec::new();
        for &seed in seeds {
            let s = EvalSetup {
                episode: EpisodeConfig {
                    k_shot: k,
                    ..setup.episode
                },
                seed,
                ..*setup
            };
            let res = evaluate(model, &s, n_tasks)?;
            means.push(res.mean);
            runs.push((k, seed, res));
        }
        let (mean, ci95) = if seeds.len() == 1 {
            let r = &runs.last().expect("one run").2;
            (r.mean, r.ci95)
        } else {
            mean_ci95(&means)
        };
        rows.push(SweepRow {
            shots: k,
            mean,
            ci95,
        });
    }
    Ok(SweepReport { runs, rows })
}

/// Per-task accuracies followed by a `mean` summary row.
pub fn tasks_csv(result: &EvalResult) -> String {
    let mut s = String::from("task_id,accuracy\n");
    for (i, a) in result.accuracies.iter().enumerate() {
        s.push_str(&format!("{i},{a}\n"));
    }
    s.push_str(&format!("mean,{}\n", result.mean));
    s
}

/// One row per seed and, with several seeds, an `all` row holding the mean
/// of the per-seed means and the CI across seeds.
pub fn summary_csv(per_seed: &[(u64, EvalResult)]) -> String {
    let mut s = String::from("seed,n_tasks,mean,ci95\n");
    for (seed, r) in per_seed {
        s.push_str(&format!("{seed},{},{},{}\n", r.n_tasks, r.mean, r.ci95));
    }
    if per_seed.len() > 1 {
        let means: Vec<f64> = per_seed.iter().map(|(_, r)| r.mean).collect();
        let (m, ci) = mean_ci95(&means);
        let n: usize = per_seed.iter().map(|(_, r)| r.n_tasks).sum();
        s.push_str(&format!("all,{n},{m},{ci}\n"));
    }
    s
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("shots,mean,ci95\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.shots, r.mean, r.ci95));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ci_examples() {
        let r = EvalResult::from_accuracies(vec![1.0; 10]).unwrap();
        assert_eq!((r.mean, r.ci95), (1.0, 0.0));
        let r = EvalResult::from_accuracies(vec![0.8, 1.0]).unwrap();
        assert!((r.mean - 0.9).abs() < 1e-12);
        let expect = 1.96 * (0.02f64).sqrt() / 2f64.sqrt();
        assert!((r.ci95 - expect).abs() < 1e-12);
        assert!((r.ci95 - 0.196).abs() < 1e-3);
    }

    #[test]
    fn ties_go_to_the_lowest_label() {
        let d = array![[1.0, 1.0, 2.0], [3.0, 0.5, 0.5], [0.0, 0.0, 0.0]];
        assert_eq!(nearest_prototype(d.view()), vec![0, 1, 0]);
    }

    #[test]
    fn csv_layouts() {
        let a = EvalResult::from_accuracies(vec![0.8, 1.0]).unwrap();
        assert_eq!(tasks_csv(&a), "task_id,accuracy\n0,0.8\n1,1\nmean,0.9\n");
        let one = summary_csv(&[(3, a.clone())]);
        assert_eq!(one.lines().count(), 2);
        let two = summary_csv(&[(3, a.clone()), (4, a)]);
        assert!(two.lines().last().unwrap().starts_with("all,4,0.9,0"));
        let rows = [SweepRow {
            shots: 5,
            mean: 0.5,
            ci95: 0.1,
        }];
        assert_eq!(sweep_csv(&rows), "shots,mean,ci95\n5,0.5,0.1\n");
    }
}
