use ndarray::{s, Array2, Array3, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use pafs::audio::CacheRecord;
use pafs::augment::AugmentConfig;
use pafs::data::{sample_episode, SplitPool};
use pafs::losses::{FsConfig, LossKind};
use pafs::nn::{Mode, Model, ModelConfig, Route};
use pafs::oracle::naive_fs_loss;
use pafs::rng;
use pafs::train::{
    build_batch, episode_loss, evaluate, EpisodeBatch, EpisodeConfig, EvalSetup, LossSetup,
    StepPlan,
};

const MELS: usize = 16;
const FRAMES: usize = 24;

fn config() -> ModelConfig {
    ModelConfig {
        channels: vec![8; 4],
        rnn_hidden: 12,
        ff_dim: 20,
        proj_hidden: 16,
        proj_out: 10,
        ..ModelConfig::default()
    }
}

fn noise(seed: u64, shape: (usize, usize, usize)) -> Array3<f32> {
    let mut r = rng::stream(seed, &[]);
    Array3::from_shape_simple_fn(shape, || r.sample(StandardNormal))
}

fn rows(a: &Array2<f32>) -> Vec<Vec<f64>> {
    a.rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect()
}

#[test]
fn embedding_shapes() {
    let model = Model::<f32>::new(config(), MELS, FRAMES, 3).unwrap();
    let x = noise(1, (6 * 4, MELS, FRAMES));
    let fused = model.embed(x.view(), false).unwrap();
    assert_eq!(fused.dim(), (6, 4 * 12));
    let once = model.embed(x.slice(s![..6, .., ..]), true).unwrap();
    assert_eq!(once.dim(), (6, 48));
    let projected = model.project(fused.view());
    assert_eq!(projected.dim(), (6, 10));
    for row in projected.rows() {
        let norm = row.dot(&row).sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
    }
    assert!(model.embed(x.slice(s![..5, .., ..]), false).is_err());
}

#[test]
fn identity_fusion_reduces_to_plain_prototypical_networks() {
    let mut model = Model::<f32>::new(config(), MELS, FRAMES, 5).unwrap();
    model.set_fusion_identity();
    let (n, k, q) = (3, 2, 2);
    let x = noise(9, ((n * k + n * q), MELS, FRAMES));
    let plain = model.backbone(x.view(), Mode::Train).unwrap();

    let support_labels: Vec<usize> = (0..n).flat_map(|c| [c; 2]).collect();
    let query_labels = support_labels.clone();
    let batch = EpisodeBatch {
        views: x.clone(),
        replicated: true,
        support_labels: support_labels.clone(),
        query_labels: query_labels.clone(),
        n_way: n,
    };
    let setup = LossSetup {
        kind: LossKind::Fs,
        ..LossSetup::default()
    };
    let out = episode_loss(
        &model,
        &batch,
        &setup,
        &StepPlan::default(),
        Mode::Train,
        &mut Route::Free,
        None,
        false,
    )
    .unwrap();

    // the fused vector is four copies of the backbone embedding, so squared
    // distances are scaled by four
    let tiled = ndarray::concatenate(
        Axis(1),
        &[plain.view(), plain.view(), plain.view(), plain.view()],
    )
    .unwrap();
    let all = rows(&tiled);
    let (support, query) = all.split_at(n * k);
    let protos = pafs::oracle::naive_prototypes(support, &support_labels, n);
    let expected = naive_fs_loss(query, &query_labels, &protos, true, false);
    assert!(
        (out.report.l_fs - expected).abs() < 1e-4 * expected.abs().max(1.0),
        "{} vs {expected}",
        out.report.l_fs
    );
    assert_eq!(out.report.l_cm, 0.0);

    // and the fused rows themselves
    let fused = model
        .embed_forward(x.view(), true, Mode::Train, &mut Route::Free)
        .unwrap()
        .0;
    for (a, b) in fused.iter().zip(tiled.iter()) {
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }
}

#[test]
fn inference_does_not_depend_on_batch_company() {
    let model = Model::<f32>::new(config(), MELS, FRAMES, 2).unwrap();
    let x = noise(4, (5, MELS, FRAMES));
    let together = model.embed(x.view(), true).unwrap();
    for i in 0..5 {
        let alone = model.embed(x.slice(s![i..i + 1, .., ..]), true).unwrap();
        for (a, b) in alone.row(0).iter().zip(together.row(i)) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}

#[test]
fn evaluation_leaves_parameters_untouched() {
    let model = Model::<f32>::new(config(), MELS, FRAMES, 8).unwrap();
    let params = model.params().fingerprint();
    let buffers = model.buffers().fingerprint();
    let counts = [6usize; 6];
    let pool = SplitPool::from_counts(&counts);
    let data = noise(12, (36, MELS, FRAMES));
    let records: Vec<CacheRecord> = (0..36)
        .map(|i| CacheRecord {
            class_id: (i / 6) as u32,
            values: data.index_axis(Axis(0), i).to_owned(),
        })
        .collect();
    let aug = AugmentConfig {
        time_mask_max: 3,
        freq_mask_max: 2,
        warp_w: 2,
        eval_augment: true,
        ..AugmentConfig::default()
    };
    let setup = EvalSetup {
        pool: &pool,
        records: &records,
        episode: EpisodeConfig {
            n_way: 3,
            k_shot: 2,
            q_queries: 2,
        },
        aug: &aug,
        squared: FsConfig::default().squared,
        seed: 1,
        tag: rng::tag::EVAL_EPISODE,
        workers: 0,
    };
    let a = evaluate(&model, &setup, 6).unwrap();
    let b = evaluate(&model, &setup, 6).unwrap();
    assert_eq!(a.accuracies, b.accuracies);
    assert_eq!(model.params().fingerprint(), params);
    assert_eq!(model.buffers().fingerprint(), buffers);

    // the evaluation batch itself is reproducible
    let ep = sample_episode(&pool, 3, 2, 2, &mut rng::stream(1, &[7])).unwrap();
    let x = build_batch(&ep, &records, &aug, true, &[7]).unwrap();
    let y = build_batch(&ep, &records, &aug, true, &[7]).unwrap();
    assert_eq!(x.views, y.views);
    assert!(!x.replicated);
}
