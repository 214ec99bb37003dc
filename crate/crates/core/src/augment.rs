//! Four-view spectrogram augmentation: the original plus one time-masked, one
//! frequency-masked and one time-warped copy, each derived from the original.

use ndarray::Array2;
use rand::Rng;

use crate::audio::Spectrogram;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Upper bound on the width of the time mask, in frames.
    pub time_mask_max: usize,
    /// Upper bound on the height of the frequency mask, in mel bins.
    pub freq_mask_max: usize,
    /// Maximum displacement of the time-warp anchor, in frames.
    pub warp_w: usize,
    /// Base seed of the per-sample augmentation streams.
    pub seed: u64,
    /// Apply augmentation at evaluation time (otherwise four copies of the
    /// original are used).
    pub eval_augment: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            time_mask_max: 20,
            freq_mask_max: 8,
            warp_w: 5,
            seed: 0,
            eval_augment: true,
        }
    }
}

impl AugmentConfig {
    /// Zero-width masks and no warp: every view equals the original.
    pub fn disabled() -> Self {
        Self {
            time_mask_max: 0,
            freq_mask_max: 0,
            warp_w: 0,
            ..Self::default()
        }
    }

    pub fn is_identity(&self) -> bool {
        self.time_mask_max == 0 && self.freq_mask_max == 0 && self.warp_w == 0
    }

    pub fn validate_for(&self, n_mels: usize, n_frames: usize) -> Result<()> {
        if self.time_mask_max > n_frames {
            return Err(Error::config(
                "aug.time_mask_max",
                format!("{} exceeds the {n_frames} time frames", self.time_mask_max),
            ));
        }
        if self.freq_mask_max > n_mels {
            return Err(Error::config(
                "aug.freq_mask_max",
                format!("{} exceeds the {n_mels} mel bins", self.freq_mask_max),
            ));
        }
        if 2 * self.warp_w >= n_frames && self.warp_w > 0 {
            return Err(Error::config(
                "aug.warp_w",
                format!("must be below half of the {n_frames} time frames"),
            ));
        }
        Ok(())
    }
}

/// `[original, time_masked, freq_masked, time_warped]`
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedViews {
    pub views: [Spectrogram; 4],
}

impl AugmentedViews {
    /// Four copies of `spec`.
    pub fn replicate(spec: &Spectrogram) -> Self {
        Self {
            views: [spec.clone(), spec.clone(), spec.clone(), spec.clone()],
        }
    }

    pub fn original(&self) -> &Spectrogram {
        &self.views[0]
    }
}

/// Zeroes one contiguous block of `w ~ U{0..=max_width}` time columns.
pub fn time_mask<R: Rng + ?Sized>(
    spec: &Spectrogram,
    max_width: usize,
    rng: &mut R,
) -> Result<Spectrogram> {
    let frames = spec.n_frames();
    if max_width > frames {
        return Err(Error::Contract(format!(
            "time mask width {max_width} exceeds {frames} frames"
        )));
    }
    let width = rng.random_range(0..=max_width);
    let start = rng.random_range(0..=frames - width);
    let mut values = spec.values().clone();
    values
        .slice_mut(ndarray::s![.., start..start + width])
        .fill(0.0);
    Ok(spec.with_values(values))
}

/// Zeroes one contiguous block of `w ~ U{0..=max_width}` mel rows.
pub fn freq_mask<R: Rng + ?Sized>(
    spec: &Spectrogram,
    max_width: usize,
    rng: &mut R,
) -> Result<Spectrogram> {
    let bins = spec.n_mels();
    if max_width > bins {
        return Err(Error::Contract(format!(
            "frequency mask width {max_width} exceeds {bins} bins"
        )));
    }
    let width = rng.random_range(0..=max_width);
    let start = rng.random_range(0..=bins - width);
    let mut values = spec.values().clone();
    values
        .slice_mut(ndarray::s![start..start + width, ..])
        .fill(0.0);
    Ok(spec.with_values(values))
}

/// Source column (fractional) read by output column `j` when the anchor at
/// `anchor` is moved to `moved`. Both end columns map to themselves.
pub(crate) fn warp_source(j: usize, anchor: usize, moved: usize, last: usize) -> f64 {
    if j <= moved {
        if moved == 0 {
            0.0
        } else {
            (j * anchor) as f64 / moved as f64
        }
    } else {
        let span_out = (last - moved) as f64;
        anchor as f64 + (j - moved) as f64 * (last - anchor) as f64 / span_out
    }
}

/// Piecewise-linear time warp: an anchor column `c` drawn from
/// `U{w..=T-1-w}` moves by `d ~ U{-w..=w}`, and each side of it is stretched
/// or compressed linearly. Columns are resampled by linear interpolation.
pub fn time_warp<R: Rng + ?Sized>(
    spec: &Spectrogram,
    warp_w: usize,
    rng: &mut R,
) -> Result<Spectrogram> {
    let frames = spec.n_frames();
    if warp_w == 0 {
        return Ok(spec.clone());
    }
    if 2 * warp_w >= frames {
        return Err(Error::Contract(format!(
            "warp parameter {warp_w} must be below half of {frames} frames"
        )));
    }
    let last = frames - 1;
    let anchor = rng.random_range(warp_w..=last - warp_w);
    let shift = rng.random_range(-(warp_w as i64)..=warp_w as i64);
    let moved = (anchor as i64 + shift) as usize;
    Ok(spec.with_values(warp_columns(spec.values(), anchor, moved)))
}

pub(crate) fn warp_columns(src: &Array2<f32>, anchor: usize, moved: usize) -> Array2<f32> {
    let (rows, frames) = src.dim();
    let last = frames - 1;
    let mut out = Array2::<f32>::zeros((rows, frames));
    for j in 0..frames {
        let s = warp_source(j, anchor, moved, last);
        let i0 = (s.floor() as usize).min(last);
        let i1 = (i0 + 1).min(last);
        let frac = (s - i0 as f64) as f32;
        for r in 0..rows {
            let a = src[[r, i0]];
            let b = src[[r, i1]];
            out[[r, j]] = a + frac * (b - a);
        }
    }
    out
}

/// Builds the four-view list. Each augmentation is applied to the original,
/// never to another augmented view.
pub fn augment_views<R: Rng + ?Sized>(
    spec: &Spectrogram,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<AugmentedViews> {
    cfg.validate_for(spec.n_mels(), spec.n_frames())?;
    let time_masked = time_mask(spec, cfg.time_mask_max, rng)?;
    let freq_masked = freq_mask(spec, cfg.freq_mask_max, rng)?;
    let warped = time_warp(spec, cfg.warp_w, rng)?;
    Ok(AugmentedViews {
        views: [spec.clone(), time_masked, freq_masked, warped],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn ramp(rows: usize, cols: usize) -> Spectrogram {
        Spectrogram::new(
            Array2::from_shape_fn((rows, cols), |(r, c)| {
                1.0 + r as f32 * 0.5 + (c as f32 * 0.37).sin()
            }),
            true,
        )
        .unwrap()
    }

    #[test]
    fn zero_widths_are_identity() {
        let x = ramp(8, 30);
        let mut r = rng::stream(1, &[]);
        assert_eq!(time_mask(&x, 0, &mut r).unwrap(), x);
        assert_eq!(freq_mask(&x, 0, &mut r).unwrap(), x);
        assert_eq!(time_warp(&x, 0, &mut r).unwrap(), x);
        let views = augment_views(&x, &AugmentConfig::disabled(), &mut r).unwrap();
        assert!(views.views.iter().all(|v| *v == x));
    }

    #[test]
    fn full_masks_zero_everything() {
        let x = ramp(6, 10);
        let all_zero = |s: &Spectrogram| s.values().iter().all(|&v| v == 0.0);
        // a full-width draw forces start 0; search seeds until one occurs
        assert!(
            (0..500).any(|seed| all_zero(&time_mask(&x, 10, &mut rng::stream(seed, &[])).unwrap()))
        );
        assert!(
            (0..500).any(|seed| all_zero(&freq_mask(&x, 6, &mut rng::stream(seed, &[])).unwrap()))
        );
    }

    #[test]
    fn time_mask_touches_whole_columns_only() {
        let x = ramp(8, 40);
        let mut r = rng::stream(42, &[]);
        let y = time_mask(&x, 10, &mut r).unwrap();
        let zeroed: Vec<usize> = (0..40)
            .filter(|&c| y.values().column(c).iter().all(|&v| v == 0.0))
            .collect();
        assert!(zeroed.len() <= 10);
        assert!(zeroed.windows(2).all(|w| w[1] == w[0] + 1));
        for c in (0..40).filter(|c| !zeroed.contains(c)) {
            assert_eq!(y.values().column(c), x.values().column(c));
        }
    }

    #[test]
    fn freq_mask_touches_whole_rows_only() {
        let x = ramp(16, 12);
        let mut r = rng::stream(9, &[]);
        let y = freq_mask(&x, 8, &mut r).unwrap();
        let zeroed: Vec<usize> = (0..16)
            .filter(|&row| y.values().row(row).iter().all(|&v| v == 0.0))
            .collect();
        assert!(zeroed.len() <= 8);
        for row in (0..16).filter(|r| !zeroed.contains(r)) {
            assert_eq!(y.values().row(row), x.values().row(row));
        }
    }

    #[test]
    fn warp_preserves_constants_and_end_columns() {
        let c = Spectrogram::new(Array2::from_elem((4, 25), -0.731), true).unwrap();
        let x = ramp(4, 25);
        for seed in 0..20 {
            let mut r = rng::stream(seed, &[]);
            assert_eq!(time_warp(&c, 5, &mut r).unwrap(), c);
            let mut r = rng::stream(seed, &[]);
            let y = time_warp(&x, 5, &mut r).unwrap();
            assert_eq!(y.values().column(0), x.values().column(0));
            assert_eq!(y.values().column(24), x.values().column(24));
        }
    }

    #[test]
    fn zero_displacement_is_identity() {
        let x = ramp(3, 20);
        for anchor in 1..19 {
            assert_eq!(warp_columns(x.values(), anchor, anchor), x.values());
        }
    }

    #[test]
    fn warp_out_of_range_is_rejected() {
        let x = ramp(3, 10);
        let mut r = rng::stream(0, &[]);
        assert!(time_warp(&x, 5, &mut r).is_err());
        assert!(time_mask(&x, 11, &mut r).is_err());
        assert!(freq_mask(&x, 4, &mut r).is_err());
    }

    #[test]
    fn seeded_views_are_deterministic() {
        let x = ramp(16, 50);
        let cfg = AugmentConfig::default();
        let a = augment_views(&x, &cfg, &mut rng::stream(5, &[1])).unwrap();
        let b = augment_views(&x, &cfg, &mut rng::stream(5, &[1])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.views[0], x);
    }
}
