use std::sync::Arc;

use ndarray::Array2;
use rustfft::{num_complex::Complex64, Fft, FftPlanner};

use super::{AudioClip, Spectrogram};
use crate::error::{Error, Result};

/// STFT and mel filterbank parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Floor added to mel power before the natural log.
    pub log_eps: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_fft: 512,
            win_length: 400,
            hop_length: 160,
            n_mels: 64,
            f_min: 0.0,
            f_max: 8_000.0,
            log_eps: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::config(format!("audio.{key}"), msg));
        if self.n_fft < 2 {
            return bad("n_fft", "must be at least 2");
        }
        if self.win_length == 0 || self.win_length > self.n_fft {
            return bad("win_length", "must be in 1..=n_fft");
        }
        if self.hop_length == 0 {
            return bad("hop_length", "must be positive");
        }
        if self.n_mels == 0 {
            return bad("n_mels", "must be positive");
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max) {
            return bad("f_min", "must satisfy 0 <= f_min < f_max");
        }
        if self.f_max > self.sample_rate as f64 / 2.0 {
            return bad("f_max", "must not exceed the Nyquist frequency");
        }
        if !(self.log_eps > 0.0) {
            return bad("log_eps", "must be positive");
        }
        Ok(())
    }
}

/// Frames produced by centered framing (`n_fft / 2` padding on both sides).
pub fn n_frames_for(n_samples: usize, cfg: &MelConfig) -> usize {
    let pad = cfg.n_fft / 2;
    1 + (n_samples + 2 * pad - cfg.n_fft) / cfg.hop_length
}

pub(crate) fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub(crate) fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank over the one-sided FFT bins.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `n_mels x (n_fft / 2 + 1)`
    weights: Array2<f64>,
}

impl MelFilterbank {
    pub fn new(cfg: &MelConfig) -> Self {
        let n_freqs = cfg.n_fft / 2 + 1;
        let nyquist = cfg.sample_rate as f64 / 2.0;
        let (m_lo, m_hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
        let f_pts: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let weights = Array2::from_shape_fn((cfg.n_mels, n_freqs), |(m, k)| {
            let f = nyquist * k as f64 / (n_freqs - 1) as f64;
            let down = (f - f_pts[m]) / (f_pts[m + 1] - f_pts[m]);
            let up = (f_pts[m + 2] - f) / (f_pts[m + 2] - f_pts[m + 1]);
            down.min(up).max(0.0)
        });
        Self { weights }
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    /// Center frequency of each band in Hz.
    pub fn centers(cfg: &MelConfig) -> Vec<f64> {
        let (m_lo, m_hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
        (1..=cfg.n_mels)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect()
    }
}

struct Stft {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl Stft {
    fn new(cfg: &MelConfig) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        // periodic Hann of win_length, centered inside n_fft
        let offset = (cfg.n_fft - cfg.win_length) / 2;
        let mut window = vec![0.0; cfg.n_fft];
        for i in 0..cfg.win_length {
            let phase = 2.0 * std::f64::consts::PI * i as f64 / cfg.win_length as f64;
            window[offset + i] = 0.5 - 0.5 * phase.cos();
        }
        Self { fft, window }
    }
}

fn pad_centered(samples: &[f32], pad: usize) -> Vec<f64> {
    let n = samples.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    // reflect padding when the clip is long enough, zeros otherwise
    let reflect = n > pad;
    for i in (1..=pad).rev() {
        out.push(if reflect { samples[i] as f64 } else { 0.0 });
    }
    out.extend(samples.iter().map(|&s| s as f64));
    for i in 0..pad {
        out.push(if reflect {
            samples[n - 2 - i] as f64
        } else {
            0.0
        });
    }
    out
}

/// Natural-log mel power spectrogram, `ln(mel_power + eps)`.
pub fn mel_spectrogram(clip: &AudioClip, cfg: &MelConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if clip.len() < cfg.win_length {
        return Err(Error::EmptyInput(format!(
            "clip of {} samples is shorter than one {}-sample window",
            clip.len(),
            cfg.win_length
        )));
    }
    if clip.sample_rate() != cfg.sample_rate {
        return Err(Error::Contract(format!(
            "clip sample rate {} does not match mel config {}",
            clip.sample_rate(),
            cfg.sample_rate
        )));
    }
    let stft = Stft::new(cfg);
    let bank = MelFilterbank::new(cfg);
    let padded = pad_centered(clip.samples(), cfg.n_fft / 2);
    let n_frames = n_frames_for(clip.len(), cfg);
    let n_freqs = cfg.n_fft / 2 + 1;

    let mut out = Array2::<f32>::zeros((cfg.n_mels, n_frames));
    let mut buf = vec![Complex64::default(); cfg.n_fft];
    let mut power = vec![0.0f64; n_freqs];
    for t in 0..n_frames {
        let start = t * cfg.hop_length;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(padded[start + i] * stft.window[i], 0.0);
        }
        stft.fft.process(&mut buf);
        for (p, b) in power.iter_mut().zip(&buf[..n_freqs]) {
            *p = b.norm_sqr();
        }
        for m in 0..cfg.n_mels {
            let energy: f64 = bank
                .weights
                .row(m)
                .iter()
                .zip(&power)
                .map(|(w, p)| w * p)
                .sum();
            out[[m, t]] = (energy + cfg.log_eps).ln() as f32;
        }
    }
    Spectrogram::new(out, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Enumerates frame start offsets over the padded signal.
    fn enumerate_frames(n_samples: usize, cfg: &MelConfig) -> usize {
        let padded = n_samples + 2 * (cfg.n_fft / 2);
        let mut count = 0;
        let mut start = 0;
        while start + cfg.n_fft <= padded {
            count += 1;
            start += cfg.hop_length;
        }
        count
    }

    #[test]
    fn frame_count_matches_enumeration() {
        let cfg = MelConfig::default();
        assert_eq!(enumerate_frames(80_000, &cfg), 501);
        assert_eq!(n_frames_for(80_000, &cfg), 501);
        for n in [400, 401, 559, 560, 16_000, 77_777] {
            assert_eq!(n_frames_for(n, &cfg), enumerate_frames(n, &cfg), "n = {n}");
        }
        let clip = AudioClip::new(vec![0.1; 80_000], 16_000).unwrap();
        let spec = mel_spectrogram(&clip, &cfg).unwrap();
        assert_eq!(spec.shape(), (64, 501));
    }

    #[test]
    fn silence_is_log_floor() {
        let cfg = MelConfig::default();
        let clip = AudioClip::new(vec![0.0; 16_000], 16_000).unwrap();
        let spec = mel_spectrogram(&clip, &cfg).unwrap();
        let floor = (1e-10f64).ln() as f32;
        assert!(spec.values().iter().all(|&v| v == floor));
    }

    #[test]
    fn too_short_clip_is_rejected() {
        let clip = AudioClip::new(vec![0.0; 399], 16_000).unwrap();
        assert!(matches!(
            mel_spectrogram(&clip, &MelConfig::default()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn deterministic() {
        let clip = AudioClip::new(
            (0..20_000)
                .map(|i| ((i * 7919) % 101) as f32 / 101.0 - 0.5)
                .collect(),
            16_000,
        )
        .unwrap();
        let cfg = MelConfig::default();
        assert_eq!(
            mel_spectrogram(&clip, &cfg).unwrap(),
            mel_spectrogram(&clip, &cfg).unwrap()
        );
    }

    #[test]
    fn pure_tone_peaks_in_its_band() {
        let cfg = MelConfig::default();
        let rate = cfg.sample_rate as f64;
        let samples: Vec<f32> = (0..16_000)
            .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / rate).sin() as f32)
            .collect();
        let clip = AudioClip::new(samples.clone(), 16_000).unwrap();
        let spec = mel_spectrogram(&clip, &cfg).unwrap();
        let means: Vec<f32> = spec
            .values()
            .rows()
            .into_iter()
            .map(|r| r.mean().unwrap())
            .collect();
        let argmax = (0..means.len())
            .max_by(|&a, &b| means[a].total_cmp(&means[b]))
            .unwrap();

        // Oracle: direct DFT of one interior frame, then mel energies through
        // independently evaluated triangles.
        let start = 4000;
        let win: Vec<f64> = (0..cfg.n_fft)
            .map(|i| {
                let off = (cfg.n_fft - cfg.win_length) / 2;
                if i >= off && i < off + cfg.win_length {
                    let p = 2.0 * std::f64::consts::PI * (i - off) as f64 / cfg.win_length as f64;
                    0.5 - 0.5 * p.cos()
                } else {
                    0.0
                }
            })
            .collect();
        let n_freqs = cfg.n_fft / 2 + 1;
        let power: Vec<f64> = (0..n_freqs)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for n in 0..cfg.n_fft {
                    let x = samples[start + n] as f64 * win[n];
                    let ang = -2.0 * std::f64::consts::PI * (k * n) as f64 / cfg.n_fft as f64;
                    re += x * ang.cos();
                    im += x * ang.sin();
                }
                re * re + im * im
            })
            .collect();
        let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
        let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
        let edges: Vec<f64> = (0..66)
            .map(|i| inv(mel(8000.0) * i as f64 / 65.0))
            .collect();
        let energies: Vec<f64> = (0..64)
            .map(|m| {
                (0..n_freqs)
                    .map(|k| {
                        let f = 8000.0 * k as f64 / (n_freqs - 1) as f64;
                        let w = if f <= edges[m + 1] {
                            (f - edges[m]) / (edges[m + 1] - edges[m])
                        } else {
                            (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1])
                        };
                        w.max(0.0) * power[k]
                    })
                    .sum::<f64>()
            })
            .collect();
        let oracle_band = (0..64)
            .max_by(|&a, &b| energies[a].total_cmp(&energies[b]))
            .unwrap();
        assert_eq!(argmax, oracle_band);
        assert!(edges[argmax] < 440.0 && 440.0 < edges[argmax + 2]);
    }
}
