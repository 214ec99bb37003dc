//! End-to-end acceptance checks. Runs as a plain binary so that the
//! one-line verdict of every check is always printed, then exits non-zero
//! if any check failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::Array2;
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::Rng;
use rand_distr::StandardNormal;

use pafs::audio::{GlobalStats, Spectrogram, SpectrogramCache, CACHE_MAGIC};
use pafs::augment::{augment_views, AugmentConfig};
use pafs::cli::{self, Dataset};
use pafs::config::RunConfig;
use pafs::data::{sample_episode, SplitPool};
use pafs::gradcheck::{run_all, GradCheckSettings};
use pafs::losses::{
    apl_loss, compute_prototypes, cpl_loss, few_shot_loss, mine_triplets, sample_cpl_negatives,
    AnchorMode, AplConfig, CplConfig, FsConfig, FsPrefactor, LossKind, Triplet,
};
use pafs::nn::{load_checkpoint, save_checkpoint, Checkpoint, Model, CHECKPOINT_MAGIC};
use pafs::oracle;
use pafs::rng;
use pafs::train::{evaluate, kshot_sweep, train, EvalResult, TrainData, TrainOutputs, TrainResult};
use pafs::Error;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn run_check(id: usize, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f));
    let elapsed = start.elapsed();
    let (mut passed, mut detail) = match outcome {
        Ok(v) => (v.passed, v.detail),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            (false, format!("panicked: {msg}"))
        }
    };
    if let Some(b) = budget {
        if elapsed > b {
            passed = false;
            detail.push_str(&format!("; over the {}s budget", b.as_secs()));
        }
    }
    println!(
        "[{}] {id}. {name}: {detail} ({:.1}s)",
        if passed { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    passed
}

fn gaussian(r: &mut rng::Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || r.sample(StandardNormal))
}

fn unit_rows(mut a: Array2<f64>) -> Array2<f64> {
    for mut row in a.rows_mut() {
        let n = row.dot(&row).sqrt();
        row.mapv_inplace(|v| v / n);
    }
    a
}

fn to_vecs(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn class_major(n: usize, per: usize) -> Vec<usize> {
    (0..n).flat_map(|c| std::iter::repeat_n(c, per)).collect()
}

// ---------------------------------------------------------------------------

fn oracle_equivalence() -> Verdict {
    let mut worst = 0.0f64;
    let mut comparisons = 0;
    for e in 0..50u64 {
        let mut r = rng::stream(2024, &[e]);
        let n = r.random_range(2..=5);
        let k = r.random_range(1..=5);
        let q = r.random_range(1..=5);
        let dim = r.random_range(2..=8);
        let support = gaussian(&mut r, n * k, dim);
        let query = gaussian(&mut r, n * q, dim);
        let s_labels = class_major(n, k);
        let q_labels = class_major(n, q);

        let protos = compute_prototypes(support.view(), &s_labels, n).unwrap();
        let naive_protos = oracle::naive_prototypes(&to_vecs(&support), &s_labels, n);
        for (row, naive) in protos.rows().into_iter().zip(&naive_protos) {
            for (a, b) in row.iter().zip(naive) {
                worst = worst.max((a - b).abs());
            }
        }
        for squared in [true, false] {
            for prefactor in [FsPrefactor::Mean, FsPrefactor::Literal] {
                let cfg = FsConfig { squared, prefactor };
                let fast = few_shot_loss(query.view(), &q_labels, protos.view(), &cfg)
                    .unwrap()
                    .loss;
                let slow = oracle::naive_fs_loss(
                    &to_vecs(&query),
                    &q_labels,
                    &naive_protos,
                    squared,
                    prefactor == FsPrefactor::Literal,
                );
                worst = worst.max((fast - slow).abs());
                comparisons += 1;
            }
        }

        let p_hat = unit_rows(gaussian(&mut r, n, dim));
        let q_hat = unit_rows(gaussian(&mut r, n * q, dim));
        let m = r.random_range(1..=6);
        let negatives = sample_cpl_negatives(&q_labels, n, m, &mut rng::stream(2024, &[e, 1]));
        let terms: Vec<(usize, usize, Vec<usize>)> = negatives
            .terms
            .iter()
            .map(|t| (t.class, t.positive, t.negatives.clone()))
            .collect();
        for temperature in [0.1, 0.5, 1.0] {
            let cfg = CplConfig { temperature, m };
            let fast = cpl_loss(p_hat.view(), q_hat.view(), &negatives, &cfg)
                .unwrap()
                .loss;
            let slow = oracle::naive_cpl(&to_vecs(&p_hat), &to_vecs(&q_hat), &terms, temperature);
            worst = worst.max((fast - slow).abs());
            comparisons += 1;
        }

        let rows = ndarray::concatenate![ndarray::Axis(0), p_hat, q_hat];
        let labels: Vec<usize> = (0..n).chain(q_labels.iter().copied()).collect();
        for alpha in [0.0, 15.0, 30.0, 45.0] {
            for mode in [AnchorMode::Prototypes, AnchorMode::All] {
                let cfg = AplConfig {
                    alpha_deg: alpha,
                    anchor_mode: mode,
                };
                let triplets = mine_triplets(rows.view(), &labels, n, alpha, mode);
                let fast = apl_loss(rows.view(), &triplets, &cfg).unwrap().loss;
                let slow = oracle::naive_apl(
                    &to_vecs(&rows),
                    &labels,
                    n,
                    alpha,
                    mode == AnchorMode::Prototypes,
                );
                worst = worst.max((fast - slow).abs());
                comparisons += 1;
            }
        }
    }
    verdict(
        worst < 1e-10,
        format!(
            "{comparisons} loss comparisons over 50 episodes, max |fast - oracle| = {worst:.2e}"
        ),
    )
}

fn gradient_correctness() -> Verdict {
    let summary = run_all(&GradCheckSettings::default()).unwrap();
    let worst = summary
        .reports
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .unwrap();
    let failed: Vec<&str> = summary
        .reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.name.as_str())
        .collect();
    verdict(
        summary.passed(),
        format!(
            "{} gradient reports on 20 instances, worst {} at {:.2e}, {} redrawn at non-differentiable points{}",
            summary.reports.len(),
            worst.name,
            worst.max_rel_error,
            summary.skipped,
            if failed.is_empty() {
                String::new()
            } else {
                format!(", failing: {}", failed.join(", "))
            }
        ),
    )
}

fn closed_forms() -> Verdict {
    // five prototypes on the axes, queries at the origin: all distances equal
    let protos = Array2::from_shape_fn((5, 5), |(i, j)| if i == j { 1.0 } else { 0.0 });
    let queries = Array2::zeros((5, 5));
    let fs = few_shot_loss(
        queries.view(),
        &[0, 1, 2, 3, 4],
        protos.view(),
        &FsConfig::default(),
    )
    .unwrap()
    .loss;

    // identical unit vectors everywhere: every inner product is 1
    let p = Array2::from_elem((5, 3), 1.0 / 3f64.sqrt());
    let q = Array2::from_elem((10, 3), 1.0 / 3f64.sqrt());
    let q_labels = class_major(5, 2);
    let negatives = sample_cpl_negatives(&q_labels, 5, 5, &mut rng::stream(1, &[]));
    let cpl = cpl_loss(
        p.view(),
        q.view(),
        &negatives,
        &CplConfig {
            temperature: 0.1,
            m: 5,
        },
    )
    .unwrap()
    .loss;

    // orthogonal unit anchor and positive, alpha = 0, N negatives
    let n_neg = 7;
    let mut rows = Array2::zeros((2 + n_neg, 4));
    rows[[0, 0]] = 1.0;
    rows[[1, 1]] = 1.0;
    for i in 0..n_neg {
        rows[[2 + i, 2 + i % 2]] = if i % 3 == 0 { -1.0 } else { 1.0 };
    }
    let triplets: Vec<Triplet> = (0..n_neg)
        .map(|i| Triplet {
            anchor: 0,
            positive: 1,
            negative: 2 + i,
        })
        .collect();
    let cfg = AplConfig {
        alpha_deg: 0.0,
        anchor_mode: AnchorMode::Prototypes,
    };
    let apl_pair = apl_loss(rows.view(), &triplets, &cfg).unwrap().loss * rows.nrows() as f64;

    let errs = [
        (fs - 5f64.ln()).abs(),
        (cpl - 6f64.ln()).abs(),
        (apl_pair - (1.0 + n_neg as f64).ln()).abs(),
    ];
    verdict(
        errs.iter().all(|&e| e < 1e-9),
        format!(
            "L_fs - ln5 = {:.1e}, L_cpl - ln6 = {:.1e}, APL pair - ln(1+{n_neg}) = {:.1e}",
            errs[0], errs[1], errs[2]
        ),
    )
}

fn specaugment_invariants() -> Verdict {
    let strategy = (
        1usize..24,
        2usize..48,
        0u64..u64::MAX,
        0usize..30,
        0usize..30,
        0usize..30,
        any::<bool>(),
    );
    let mut runner = TestRunner::new(ProptestConfig {
        cases: 1000,
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    let result = runner.run(&strategy, |(f, t, seed, tm, fm, ww, zero)| {
        let (tm, fm, ww) = if zero {
            (0, 0, 0)
        } else {
            (tm.min(t), fm.min(f), ww.min((t - 1) / 2))
        };
        let mut r = rng::stream(seed, &[]);
        let values = Array2::from_shape_simple_fn((f, t), || r.sample::<f32, _>(StandardNormal));
        let spec = Spectrogram::new(values.clone(), true).unwrap();
        let cfg = AugmentConfig {
            time_mask_max: tm,
            freq_mask_max: fm,
            warp_w: ww,
            seed,
            eval_augment: true,
        };
        let views = augment_views(&spec, &cfg, &mut rng::stream(seed, &[1]))
            .unwrap()
            .views;
        for v in &views {
            prop_assert_eq!(v.shape(), (f, t));
        }
        prop_assert_eq!(views[0].values(), &values);
        let energy = |a: &Array2<f32>| a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>();
        for (i, masked) in [(1usize, &views[1]), (2, &views[2])] {
            let m = masked.values();
            prop_assert!(energy(m) <= energy(&values) + 1e-9);
            for r in 0..f {
                for c in 0..t {
                    if m[[r, c]] != values[[r, c]] {
                        // a changed cell implies the whole column (or row) is masked
                        if i == 1 {
                            prop_assert!(m.column(c).iter().all(|&x| x == 0.0));
                        } else {
                            prop_assert!(m.row(r).iter().all(|&x| x == 0.0));
                        }
                    }
                }
            }
        }
        if zero {
            for v in &views {
                prop_assert_eq!(v.values(), &values);
            }
        }
        Ok(())
    });
    match result {
        Ok(()) => verdict(
            true,
            "1000 random cases: shapes, identity view, row/column-only masks, energy, zero widths",
        ),
        Err(e) => verdict(false, format!("counterexample: {e}")),
    }
}

fn episode_sampler() -> Verdict {
    let pool = SplitPool::from_counts(&[20; 20]);
    let mut counts = [0usize; 20];
    let mut overlaps = 0;
    for i in 0..10_000u64 {
        let ep = sample_episode(&pool, 5, 5, 5, &mut rng::stream(77, &[i])).unwrap();
        let support: std::collections::HashSet<usize> =
            ep.support.iter().map(|x| x.sample).collect();
        overlaps += ep
            .query
            .iter()
            .filter(|x| support.contains(&x.sample))
            .count();
        for &c in &ep.classes {
            counts[c] += 1;
        }
    }
    let expected = 10_000.0 * 5.0 / 20.0;
    let chi2: f64 = counts
        .iter()
        .map(|&o| (o as f64 - expected).powi(2) / expected)
        .sum();
    // 99th percentile of chi-square with 19 degrees of freedom
    let critical = 36.191;
    verdict(
        overlaps == 0 && chi2 < critical,
        format!("10000 episodes, support/query overlaps {overlaps}, chi-square {chi2:.2} < {critical} (df 19)"),
    )
}

// ---------------------------------------------------------------------------

/// Desk-scale settings: short synthetic clips and a narrow backbone keep
/// three 2000-episode trainings within a few minutes on one core.
fn desk_config() -> RunConfig {
    let text = "
        synth.n_classes = 25
        synth.clips_per_class = 30
        synth.duration_s = 0.32
        audio.n_mels = 16
        audio.segment_s = 0.32
        aug.time_mask_max = 4
        aug.freq_mask_max = 2
        aug.warp_w = 2
        model.channels = 16,16,16,16
        train.epochs = 20
        train.episodes_per_epoch = 100
        train.val_episodes = 50
        eval.n_tasks = 500
        apl.alpha_deg = 15
        loss.lambda = 0.3
    ";
    let cfg = RunConfig::from_text(text).unwrap();
    cfg.validate().unwrap();
    cfg
}

fn with_loss(base: &RunConfig, kind: LossKind) -> RunConfig {
    let mut cfg = base.clone();
    cfg.train.loss.kind = kind;
    if kind == LossKind::Fs {
        cfg.train.aug = AugmentConfig {
            eval_augment: cfg.train.aug.eval_augment,
            ..AugmentConfig::disabled()
        };
    }
    cfg
}

struct Trained {
    cfg: RunConfig,
    result: TrainResult,
    seconds: f64,
}

struct Desk {
    dir: tempfile::TempDir,
    ds: Dataset,
}

fn build_desk(cfg: &RunConfig) -> Desk {
    let dir = tempfile::tempdir().unwrap();
    cli::cmd_synth(cfg, dir.path()).unwrap();
    cli::cmd_prepare(cfg, dir.path()).unwrap();
    let ds = Dataset::load(dir.path(), 0).unwrap();
    Desk { dir, ds }
}

fn train_model(desk: &Desk, cfg: RunConfig, out: Option<&Path>) -> Trained {
    let start = Instant::now();
    let model = Model::<f32>::new(
        cfg.model.clone(),
        desk.ds.data.cache.n_mels(),
        desk.ds.data.cache.n_frames(),
        cfg.seed,
    )
    .unwrap();
    let data = TrainData {
        records: desk.ds.data.records(),
        train: &desk.ds.train,
        val: &desk.ds.val,
    };
    let outputs = TrainOutputs {
        dir: out.map(Path::to_path_buf),
        config_text: cfg.to_text(),
        stats: desk.ds.data.stats(),
        workers: 0,
    };
    let result = train(model, &cfg.train_config(), &data, &outputs).unwrap();
    Trained {
        cfg,
        result,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn test_accuracy(desk: &Desk, t: &Trained, n_tasks: usize) -> EvalResult {
    let aug = t.cfg.train_config().aug;
    let setup = t
        .cfg
        .eval_setup(&desk.ds.test, desk.ds.data.records(), &aug, 1);
    evaluate(&t.result.best, &setup, n_tasks).unwrap()
}

fn synthetic_training(desk: &Desk, apl: &Trained, fs: &Trained) -> Verdict {
    let start = Instant::now();
    let a = test_accuracy(desk, apl, 500);
    let f = test_accuracy(desk, fs, 500);
    let total = apl.seconds + fs.seconds + start.elapsed().as_secs_f64();
    verdict(
        a.mean >= 0.90 && f.mean >= 0.85 && total < 900.0,
        format!(
            "FS+APL {:.4} +- {:.4} (need 0.90), ProtoNets {:.4} +- {:.4} (need 0.85) over 500 test tasks; \
             training {:.0}s + {:.0}s, total {:.0}s of 900s",
            a.mean, a.ci95, f.mean, f.ci95, apl.seconds, fs.seconds, total
        ),
    )
}

fn kshot_trend(desk: &Desk, models: &[&Trained]) -> Verdict {
    let seeds = [11, 12, 13, 14, 15];
    let mut ok = true;
    let mut parts = Vec::new();
    for t in models {
        let aug = t.cfg.train_config().aug;
        let setup = t
            .cfg
            .eval_setup(&desk.ds.test, desk.ds.data.records(), &aug, seeds[0]);
        let report = kshot_sweep(&t.result.best, &setup, &[1, 7], 100, &seeds).unwrap();
        let (one, seven) = (report.rows[0].mean, report.rows[1].mean);
        ok &= seven >= one - 0.02;
        parts.push(format!(
            "{} 1-shot {:.4} / 7-shot {:.4}",
            t.cfg.train.loss.kind, one, seven
        ));
    }
    verdict(ok, format!("{} (5 seeds x 100 tasks)", parts.join(", ")))
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let d = data.to_str().unwrap();
    let small = [
        "--set",
        "synth.n_classes=25",
        "--set",
        "synth.clips_per_class=10",
        "--set",
        "synth.duration_s=0.32",
        "--set",
        "audio.n_mels=16",
        "--set",
        "audio.segment_s=0.32",
        "--set",
        "model.channels=8,8,8,8",
        "--set",
        "aug.time_mask_max=4",
        "--set",
        "aug.freq_mask_max=2",
        "--set",
        "aug.warp_w=2",
        "--set",
        "train.episodes_per_epoch=5",
        "--set",
        "train.val_episodes=5",
        "--set",
        "eval.n_tasks=40",
        "--set",
        "eval.shots=1,5",
    ];
    let run = |args: &[&str]| {
        let mut all = vec!["pafs"];
        all.extend_from_slice(args);
        all.extend_from_slice(&small);
        cli::run(all)
    };
    assert_eq!(run(&["synth", "--out-dir", d]), 0);
    assert_eq!(run(&["prepare", "--out-dir", d]), 0);
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = out.to_str().unwrap();
        let prepared = format!("data.prepared={d}");
        assert_eq!(
            run(&["train", "--out-dir", o, "--epochs", "2", "--set", &prepared]),
            0
        );
        let ckpt = out.join("checkpoint.pafs");
        let c = ckpt.to_str().unwrap();
        assert_eq!(
            run(&[
                "eval",
                "--out-dir",
                o,
                "--checkpoint",
                c,
                "--seeds",
                "3,4",
                "--set",
                &prepared
            ]),
            0
        );
        let read = |f: &str| std::fs::read(out.join(f)).unwrap();
        outputs.push([
            read("eval_summary.csv"),
            read("kshot.csv"),
            read("train_log.csv"),
            read("checkpoint.pafs"),
        ]);
    }
    let same = outputs[0] == outputs[1];
    verdict(
        same,
        format!(
            "two train+eval runs: eval summary, k-shot CSV, training log and checkpoint {}",
            if same { "byte-identical" } else { "differ" }
        ),
    )
}

fn persistence(desk: &Desk, trained: &Trained) -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;

    let cache = &desk.ds.data.cache;
    let path = desk.dir.path().join("roundtrip.pafs");
    cache.write(&path).unwrap();
    let back = SpectrogramCache::read(&path).unwrap();
    let bits = |c: &SpectrogramCache| -> Vec<u32> {
        c.records()
            .iter()
            .flat_map(|r| r.values.iter().map(|v| v.to_bits()))
            .collect()
    };
    let cache_exact = back.len() == cache.len()
        && bits(&back) == bits(cache)
        && back.to_bytes() == cache.to_bytes();
    ok &= cache_exact;
    notes.push(format!(
        "cache of {} records bit-exact: {cache_exact}",
        cache.len()
    ));

    let bytes = std::fs::read(&path).unwrap();
    let mut rejected = 0;
    let tampered: [(usize, u8); 3] = [(0, b'X'), (8, 9), (20, 0xff)];
    for (offset, value) in tampered {
        let mut b = bytes.clone();
        b[offset] = value;
        match SpectrogramCache::from_bytes(&b) {
            Err(Error::Format(_)) | Err(Error::Corruption(_)) => rejected += 1,
            _ => {}
        }
    }
    let truncated = SpectrogramCache::from_bytes(&bytes[..bytes.len() - 3]).is_err();
    ok &= rejected == 3 && truncated && &bytes[..8] == CACHE_MAGIC;
    notes.push(format!(
        "tampered cache headers rejected {rejected}/3, truncation rejected: {truncated}"
    ));

    let model = &trained.result.best;
    let ckpt = Checkpoint::from_model(model, trained.cfg.to_text(), desk.ds.data.stats(), 1, 0.5);
    let cpath = desk.dir.path().join("model.pafs");
    save_checkpoint(&cpath, &ckpt).unwrap();
    let loaded = load_checkpoint(&cpath).unwrap();
    let restored = loaded.to_model(trained.cfg.model.clone()).unwrap();
    let ckpt_exact = loaded == ckpt
        && restored.params().fingerprint() == model.params().fingerprint()
        && restored.buffers().fingerprint() == model.buffers().fingerprint()
        && loaded.to_bytes() == std::fs::read(&cpath).unwrap();
    ok &= ckpt_exact;
    notes.push(format!("checkpoint bit-exact: {ckpt_exact}"));

    let cbytes = std::fs::read(&cpath).unwrap();
    let mut rejected = 0;
    let len = cbytes.len();
    let offsets = [0usize, 8, len / 2, len - 1];
    for offset in offsets {
        let mut b = cbytes.clone();
        b[offset] ^= 0x5a;
        if Checkpoint::from_bytes(&b).is_err() {
            rejected += 1;
        }
    }
    ok &= rejected == offsets.len() && &cbytes[..8] == CHECKPOINT_MAGIC;
    notes.push(format!(
        "tampered checkpoints rejected {rejected}/{}",
        offsets.len()
    ));
    let _ = GlobalStats::new(0.0, 1.0);
    verdict(ok, notes.join("; "))
}

type CheapCheck = (usize, &'static str, Option<Duration>, fn() -> Verdict);

fn main() {
    // numeric arguments select a subset of checks, e.g. `cargo test --test acceptance -- 6 7`
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let wanted = |id: usize| only.is_empty() || only.contains(&id);
    let minute = Duration::from_secs(60);
    let mut results = Vec::new();
    let cheap: [CheapCheck; 5] = [
        (1, "oracle equivalence", Some(minute), oracle_equivalence),
        (
            2,
            "gradient correctness",
            Some(5 * minute),
            gradient_correctness,
        ),
        (3, "closed-form values", None, closed_forms),
        (
            4,
            "SpecAugment invariants",
            Some(minute),
            specaugment_invariants,
        ),
        (5, "episode sampler", Some(minute), episode_sampler),
    ];
    for (id, name, budget, f) in cheap {
        if wanted(id) {
            results.push(run_check(id, name, budget, f));
        }
    }

    if [6, 7, 9].into_iter().any(wanted) {
        let base = desk_config();
        let desk = build_desk(&base);
        let apl = train_model(&desk, with_loss(&base, LossKind::FsApl), None);
        let fs = (wanted(6) || wanted(7))
            .then(|| train_model(&desk, with_loss(&base, LossKind::Fs), None));
        if wanted(6) {
            let fs = fs.as_ref().unwrap();
            results.push(run_check(6, "synthetic training", None, || {
                synthetic_training(&desk, &apl, fs)
            }));
        }
        if wanted(7) {
            let cpl = train_model(&desk, with_loss(&base, LossKind::FsCpl), None);
            let fs = fs.as_ref().unwrap();
            results.push(run_check(7, "k-shot trend", None, || {
                kshot_trend(&desk, &[fs, &cpl, &apl])
            }));
        }
        if wanted(9) {
            results.push(run_check(9, "bit-exact persistence", None, || {
                persistence(&desk, &apl)
            }));
        }
    }
    if wanted(8) {
        results.push(run_check(8, "determinism", None, determinism));
    }

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} checks passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
