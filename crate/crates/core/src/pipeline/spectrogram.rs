//! Log-mel spectrogram extraction.
//!
//! Frames are taken without centring: `frames = floor((len - win) / hop) + 1`.
//! Each frame is Hann-windowed, zero-padded to the next power of two, and its
//! power spectrum is pooled by triangular HTK-mel filters.

use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::Spectrogram;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrogramConfig {
    pub sample_rate_hz: u32,
    pub n_mels: usize,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub log_scale: bool,
    pub clip_length_s: f64,
    pub log_floor: f64,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        SpectrogramConfig {
            sample_rate_hz: 16_000,
            n_mels: 64,
            window_ms: 25.0,
            hop_ms: 10.0,
            log_scale: true,
            clip_length_s: 5.0,
            log_floor: 1e-10,
        }
    }
}

impl SpectrogramConfig {
    /// Reduced-resolution settings used for CPU-scale runs.
    pub fn desk() -> Self {
        SpectrogramConfig {
            n_mels: 32,
            window_ms: 40.0,
            hop_ms: 40.0,
            ..Default::default()
        }
    }

    // negated comparisons so NaN fails every check
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if self.n_mels == 0 {
            return Err(Error::invalid("n_mels must be >= 1"));
        }
        if !(self.hop_ms > 0.0 && self.window_ms >= self.hop_ms) {
            return Err(Error::invalid("need window_ms >= hop_ms > 0"));
        }
        if !(self.clip_length_s > 0.0) {
            return Err(Error::invalid("clip length must be positive"));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::invalid("log floor must be positive"));
        }
        if self.window_len() < 2 || self.hop_len() < 1 {
            return Err(Error::invalid("window shorter than two samples"));
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        (self.window_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.hop_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn n_fft(&self) -> usize {
        self.window_len().next_power_of_two()
    }

    pub fn clip_samples(&self) -> usize {
        (self.clip_length_s * self.sample_rate_hz as f64).round() as usize
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        let win = self.window_len();
        if n_samples <= win {
            1
        } else {
            (n_samples - win) / self.hop_len() + 1
        }
    }

    /// Output shape `(n_mels, frames)` for one sub-clip.
    pub fn output_shape(&self) -> (usize, usize) {
        (self.n_mels, self.n_frames(self.clip_samples()))
    }

    /// Short stable digest of the configuration, used to key cache entries.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(&digest[..8])
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters over `0..=n_fft/2` bins, spanning 0 Hz to Nyquist.
/// Returns the filter matrix and each filter's centre frequency.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> (Array2<f64>, Vec<f64>) {
    let n_bins = n_fft / 2 + 1;
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    (fb, edges[1..=n_mels].to_vec())
}

/// Reusable extractor: holds the FFT plan, window and filterbank.
pub struct SpectrogramExtractor {
    config: SpectrogramConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filterbank: Array2<f64>,
}

impl std::fmt::Debug for SpectrogramExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectrogramExtractor")
            .field("config", &self.config)
            .finish()
    }
}

impl SpectrogramExtractor {
    pub fn new(config: &SpectrogramConfig) -> Result<Self> {
        config.validate()?;
        let n_fft = config.n_fft();
        let win = config.window_len();
        let window = (0..win)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / win as f64).cos())
            .collect();
        let (filterbank, _) = mel_filterbank(config.n_mels, n_fft, config.sample_rate_hz);
        Ok(SpectrogramExtractor {
            config: config.clone(),
            fft: FftPlanner::new().plan_fft_forward(n_fft),
            window,
            filterbank,
        })
    }

    pub fn config(&self) -> &SpectrogramConfig {
        &self.config
    }

    /// Power spectrum of frame `t`, bins `0..=n_fft/2`.
    pub fn power_spectrum(&self, samples: &[f32], t: usize) -> Vec<f64> {
        let n_fft = self.config.n_fft();
        let start = t * self.config.hop_len();
        let mut buf: Vec<Complex<f64>> = (0..n_fft)
            .map(|i| {
                let x = if i < self.window.len() {
                    samples.get(start + i).copied().unwrap_or(0.0) as f64 * self.window[i]
                } else {
                    0.0
                };
                Complex::new(x, 0.0)
            })
            .collect();
        self.fft.process(&mut buf);
        buf[..n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn compute(&self, samples: &[f32], sample_rate: u32) -> Result<Spectrogram> {
        if sample_rate != self.config.sample_rate_hz {
            return Err(Error::invalid(format!(
                "waveform at {sample_rate} Hz, extractor expects {} Hz",
                self.config.sample_rate_hz
            )));
        }
        let frames = self.config.n_frames(samples.len());
        let mut out = Array2::<f32>::zeros((self.config.n_mels, frames));
        for t in 0..frames {
            let power = self.power_spectrum(samples, t);
            for m in 0..self.config.n_mels {
                let e: f64 = self.filterbank.row(m).iter().zip(&power).map(|(w, p)| w * p).sum();
                out[[m, t]] = if self.config.log_scale {
                    e.max(self.config.log_floor).ln() as f32
                } else {
                    e as f32
                };
            }
        }
        Ok(Spectrogram(out))
    }
}

/// One-shot convenience wrapper around [`SpectrogramExtractor`].
pub fn compute_spectrogram(samples: &[f32], sample_rate: u32, config: &SpectrogramConfig) -> Result<Spectrogram> {
    SpectrogramExtractor::new(config)?.compute(samples, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, secs: f64, rate: u32) -> Vec<f32> {
        (0..(secs * rate as f64) as usize)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin() as f32 * 0.5)
            .collect()
    }

    // Naive O(n^2) DFT power, independent of rustfft.
    fn naive_power(frame: &[f64], n_fft: usize) -> Vec<f64> {
        (0..=n_fft / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, x) in frame.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k * n) as f64 / n_fft as f64;
                    re += x * ang.cos();
                    im += x * ang.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn frame_count_for_default_config() {
        let cfg = SpectrogramConfig::default();
        assert_eq!(cfg.window_len(), 400);
        assert_eq!(cfg.hop_len(), 160);
        assert_eq!(cfg.n_fft(), 512);
        assert_eq!(cfg.n_frames(80_000), 498);
        assert_eq!(cfg.output_shape(), (64, 498));
        let spec = compute_spectrogram(&vec![0.1; 80_000], 16_000, &cfg).unwrap();
        assert_eq!(spec.shape(), (64, 498));
    }

    #[test]
    fn silence_hits_the_log_floor() {
        let cfg = SpectrogramConfig::default();
        let spec = compute_spectrogram(&vec![0.0; 16_000], 16_000, &cfg).unwrap();
        let floor = (1e-10f64).ln() as f32;
        assert!(spec.0.iter().all(|&v| v == floor));
    }

    #[test]
    fn tone_peak_is_stable_and_matches_dft_oracle() {
        let cfg = SpectrogramConfig::default();
        let x = tone(440.0, 1.0, 16_000);
        let ex = SpectrogramExtractor::new(&cfg).unwrap();
        let spec = ex.compute(&x, 16_000).unwrap();
        let argmax: Vec<usize> = spec
            .0
            .columns()
            .into_iter()
            .map(|col| col.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0)
            .collect();
        assert!(argmax.iter().all(|&a| a == argmax[0]));

        // the FFT power of one frame equals a direct DFT of the windowed frame
        let t = 7;
        let start = t * cfg.hop_len();
        let win = cfg.window_len();
        let frame: Vec<f64> = (0..win)
            .map(|n| {
                let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / win as f64).cos();
                x[start + n] as f64 * w
            })
            .collect();
        let oracle = naive_power(&frame, cfg.n_fft());
        let fast = ex.power_spectrum(&x, t);
        let peak = oracle.iter().copied().fold(0.0, f64::max);
        for (a, b) in oracle.iter().zip(&fast) {
            assert!((a - b).abs() <= 1e-9 * peak);
        }
        // the DFT peak bin lands inside the winning mel filter
        let peak_bin = oracle.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let (fb, centres) = mel_filterbank(cfg.n_mels, cfg.n_fft(), 16_000);
        assert!(fb[[argmax[0], peak_bin]] > 0.0);
        assert!((centres[argmax[0]] - 440.0).abs() < 60.0);
    }

    #[test]
    fn deterministic_bits() {
        let cfg = SpectrogramConfig::desk();
        let x = tone(1000.0, 5.0, 16_000);
        let a = compute_spectrogram(&x, 16_000, &cfg).unwrap();
        let b = compute_spectrogram(&x, 16_000, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), cfg.output_shape());
    }

    #[test]
    fn filterbank_has_no_empty_filters() {
        let (fb, _) = mel_filterbank(64, 512, 16_000);
        assert!(fb.rows().into_iter().all(|r| r.sum() > 0.0));
    }

    #[test]
    fn config_validation() {
        let bad = SpectrogramConfig {
            hop_ms: 30.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(compute_spectrogram(&[0.0; 100], 8_000, &SpectrogramConfig::default()).is_err());
        assert_ne!(
            SpectrogramConfig::default().config_hash(),
            SpectrogramConfig::desk().config_hash()
        );
    }
}
