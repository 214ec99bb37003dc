//! Audio ingestion: WAV loading, resampling, fixed-length segmentation,
//! log-mel spectrograms, global standardization and the binary spectrogram
//! cache.

mod cache;
mod mel;
mod stats;

pub use cache::{CacheRecord, SpectrogramCache, CACHE_MAGIC, CACHE_VERSION};
pub use mel::{mel_spectrogram, n_frames_for, MelConfig, MelFilterbank};
pub use stats::{compute_stats, standardize, GlobalStats, STD_FLOOR};

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Sample rate every clip is brought to on ingestion.
pub const TARGET_SAMPLE_RATE: u32 = 16_000;

/// Mono audio at a known sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("audio clip has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Contract("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Linear-interpolation resampling.
    pub fn resample(&self, target_rate: u32) -> Result<AudioClip> {
        if target_rate == 0 {
            return Err(Error::Contract(
                "target sample rate must be positive".into(),
            ));
        }
        if target_rate == self.sample_rate {
            return Ok(self.clone());
        }
        let src = self.sample_rate as u64;
        let dst = target_rate as u64;
        let out_len = ((self.samples.len() as u64 * dst + src / 2) / src).max(1) as usize;
        let step = src as f64 / dst as f64;
        let last = self.samples.len() - 1;
        let out = (0..out_len)
            .map(|i| {
                let pos = i as f64 * step;
                let i0 = (pos.floor() as usize).min(last);
                let i1 = (i0 + 1).min(last);
                let frac = (pos - i0 as f64) as f32;
                self.samples[i0] * (1.0 - frac) + self.samples[i1] * frac
            })
            .collect();
        AudioClip::new(out, target_rate)
    }
}

/// Reads a PCM or float WAV file, averages channels to mono and resamples to
/// `target_rate`.
pub fn load_audio(path: &Path, target_rate: u32) -> Result<AudioClip> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        }
    };
    if interleaved.len() < channels {
        return Err(Error::EmptyInput(format!(
            "{} contains no audio frames",
            path.display()
        )));
    }
    let mono: Vec<f32> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();
    AudioClip::new(mono, spec.sample_rate)?.resample(target_rate)
}

/// Writes a mono 32-bit float WAV.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let map = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(map)?;
    for &s in &clip.samples {
        writer.write_sample(s).map_err(map)?;
    }
    writer.finalize().map_err(map)
}

/// Splits a clip into consecutive non-overlapping segments of `seconds`
/// duration. The tail (or a clip shorter than one segment) is zero-padded.
pub fn segment_clip(clip: &AudioClip, seconds: f64) -> Result<Vec<AudioClip>> {
    if !(seconds > 0.0) {
        return Err(Error::Contract(format!(
            "segment duration must be positive, got {seconds}"
        )));
    }
    let seg_len = (seconds * clip.sample_rate as f64).round() as usize;
    if seg_len == 0 {
        return Err(Error::Contract("segment shorter than one sample".into()));
    }
    let n = clip.samples.len().div_ceil(seg_len).max(1);
    Ok((0..n)
        .map(|i| {
            let start = i * seg_len;
            let end = (start + seg_len).min(clip.samples.len());
            let mut samples = clip.samples[start..end].to_vec();
            samples.resize(seg_len, 0.0);
            AudioClip {
                samples,
                sample_rate: clip.sample_rate,
            }
        })
        .collect())
}

/// Log-mel matrix with `n_mels` rows and `n_frames` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    values: Array2<f32>,
    standardized: bool,
}

impl Spectrogram {
    pub fn new(values: Array2<f32>, standardized: bool) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spectrogram contains NaN or Inf".into()));
        }
        Ok(Self {
            values,
            standardized,
        })
    }

    pub fn values(&self) -> &Array2<f32> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f32> {
        self.values
    }

    pub fn n_mels(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Same metadata, new values. Used by augmentations, which preserve shape.
    pub(crate) fn with_values(&self, values: Array2<f32>) -> Spectrogram {
        debug_assert_eq!(values.dim(), self.values.dim());
        Spectrogram {
            values,
            standardized: self.standardized,
        }
    }
}
