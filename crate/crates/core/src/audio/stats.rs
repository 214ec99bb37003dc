use super::Spectrogram;
use crate::error::{Error, Result};

/// Minimum standard deviation; keeps standardization finite on constant data.
pub const STD_FLOOR: f64 = 1e-8;

/// Pooled mean and population standard deviation over every cell of the
/// training spectrograms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalStats {
    pub mean: f64,
    pub std: f64,
}

impl GlobalStats {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() || !std.is_finite() {
            return Err(Error::NonFinite("global statistics".into()));
        }
        Ok(Self {
            mean,
            std: std.max(STD_FLOOR),
        })
    }
}

/// Streams spectrograms, merging per-matrix moments (Chan et al. pairwise
/// update) so that large training sets need no second pass.
pub fn compute_stats<'a, I>(spectrograms: I) -> Result<GlobalStats>
where
    I: IntoIterator<Item = &'a Spectrogram>,
{
    let mut count = 0f64;
    let mut mean = 0f64;
    let mut m2 = 0f64;
    for spec in spectrograms {
        if spec.is_standardized() {
            return Err(Error::Contract(
                "statistics must be computed on raw spectrograms".into(),
            ));
        }
        let n = spec.values().len() as f64;
        if n == 0.0 {
            continue;
        }
        let local_mean = spec.values().iter().map(|&v| v as f64).sum::<f64>() / n;
        let local_m2: f64 = spec
            .values()
            .iter()
            .map(|&v| (v as f64 - local_mean).powi(2))
            .sum();
        let total = count + n;
        let delta = local_mean - mean;
        mean += delta * n / total;
        m2 += local_m2 + delta * delta * count * n / total;
        count = total;
    }
    if count == 0.0 {
        return Err(Error::EmptyInput("no training spectrograms".into()));
    }
    GlobalStats::new(mean, (m2 / count).sqrt())
}

pub fn standardize(spec: &Spectrogram, stats: &GlobalStats) -> Result<Spectrogram> {
    if spec.is_standardized() {
        return Err(Error::Contract(
            "spectrogram is already standardized".into(),
        ));
    }
    let values = spec
        .values()
        .mapv(|v| ((v as f64 - stats.mean) / stats.std) as f32);
    Spectrogram::new(values, true)
}
