//! Synthetic harmonic-tone dataset for desk-scale runs.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{write_manifest, ManifestRow, Split};
use crate::audio::{write_wav, AudioClip, TARGET_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::rng;

/// Relative amplitudes of the fundamental and its first two harmonics.
const HARMONIC_GAINS: [f64; 3] = [1.0, 0.5, 0.25];
const OUTPUT_GAIN: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub clips_per_class: usize,
    pub duration_s: f64,
    /// Standard deviation of the additive white Gaussian noise.
    pub noise_level: f64,
    /// Fundamentals are spaced evenly on the mel scale over this range (Hz).
    pub f0_min: f64,
    pub f0_max: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_classes: 25,
            clips_per_class: 30,
            duration_s: 5.0,
            noise_level: 0.05,
            f0_min: 250.0,
            f0_max: 4000.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 3 {
            return Err(Error::config(
                "synth.n_classes",
                "need at least 3 classes for three splits",
            ));
        }
        if self.clips_per_class == 0 {
            return Err(Error::config("synth.clips_per_class", "must be positive"));
        }
        if !(self.duration_s > 0.0) {
            return Err(Error::config("synth.duration_s", "must be positive"));
        }
        if !(self.noise_level >= 0.0) {
            return Err(Error::config("synth.noise_level", "must be non-negative"));
        }
        let nyquist = TARGET_SAMPLE_RATE as f64 / 2.0;
        if !(self.f0_min > 0.0 && self.f0_min < self.f0_max && self.f0_max < nyquist) {
            return Err(Error::config(
                "synth.f0_min",
                "need 0 < f0_min < f0_max < Nyquist",
            ));
        }
        Ok(())
    }

    /// Class counts for a 60/20/20 train/val/test split.
    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let n = self.n_classes;
        let val = ((n as f64 * 0.2).round() as usize).max(1);
        let test = val;
        (n - val - test, val, test)
    }
}

/// Pairwise distinct fundamentals, evenly spaced in mel.
pub fn class_fundamentals(spec: &SynthSpec) -> Vec<f64> {
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let (lo, hi) = (mel(spec.f0_min), mel(spec.f0_max));
    let n = spec.n_classes;
    (0..n)
        .map(|i| {
            let t = if n == 1 {
                0.0
            } else {
                i as f64 / (n - 1) as f64
            };
            inv(lo + (hi - lo) * t)
        })
        .collect()
}

/// One clip: fundamental plus two harmonics at random phases, plus noise.
/// Components at or above Nyquist are dropped.
pub fn synth_clip<R: Rng + ?Sized>(f0: f64, spec: &SynthSpec, rng: &mut R) -> Result<AudioClip> {
    let rate = TARGET_SAMPLE_RATE as f64;
    let n = (spec.duration_s * rate).round() as usize;
    let phases: Vec<f64> = HARMONIC_GAINS
        .iter()
        .map(|_| rng.random_range(0.0..2.0 * PI))
        .collect();
    let noise = Normal::new(0.0, spec.noise_level.max(0.0))
        .map_err(|e| Error::config("synth.noise_level", e.to_string()))?;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            let tone: f64 = HARMONIC_GAINS
                .iter()
                .zip(&phases)
                .enumerate()
                .filter(|(h, _)| f0 * ((*h + 1) as f64) < rate / 2.0)
                .map(|(h, (g, p))| g * (2.0 * PI * f0 * (h + 1) as f64 * t + p).sin())
                .sum();
            let eps = if spec.noise_level > 0.0 {
                noise.sample(rng)
            } else {
                0.0
            };
            (OUTPUT_GAIN * tone + eps) as f32
        })
        .collect();
    AudioClip::new(samples, TARGET_SAMPLE_RATE)
}

/// Writes `audio/<class>/<clip>.wav` files and `manifest.csv` under `out_dir`
/// and returns the manifest rows. Classes are assigned to splits by a seeded
/// shuffle.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<Vec<ManifestRow>> {
    spec.validate()?;
    let f0s = class_fundamentals(spec);
    let (n_train, n_val, _) = spec.split_sizes();
    let mut order: Vec<usize> = (0..spec.n_classes).collect();
    order.shuffle(&mut rng::stream(spec.seed, &[rng::tag::SYNTH, u64::MAX]));
    let mut split_of = vec![Split::Test; spec.n_classes];
    for (rank, &c) in order.iter().enumerate() {
        split_of[c] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    let mut rows = Vec::with_capacity(spec.n_classes * spec.clips_per_class);
    for (c, &f0) in f0s.iter().enumerate() {
        let label = format!("class_{c:03}");
        let dir = out_dir.join("audio").join(&label);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for j in 0..spec.clips_per_class {
            let mut r = rng::stream(spec.seed, &[rng::tag::SYNTH, c as u64, j as u64]);
            let clip = synth_clip(f0, spec, &mut r)?;
            let path = dir.join(format!("clip_{j:04}.wav"));
            write_wav(&path, &clip)?;
            rows.push(ManifestRow {
                path,
                label: label.clone(),
                split: split_of[c],
            });
        }
    }
    write_manifest(&out_dir.join("manifest.csv"), &rows)?;
    Ok(rows)
}
