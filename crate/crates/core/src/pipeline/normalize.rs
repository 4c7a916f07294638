//! Normalisation statistics (population std) and their application.

use ndarray::Axis;

use crate::error::{Error, Result};
use crate::types::{NormMode, NormalizationStats, Spectrogram, STD_EPSILON};

/// Running mean / sum of squared deviations, merged with Chan's update.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn of<'a>(values: impl Iterator<Item = &'a f32>) -> Self {
        let mut m = Moments::default();
        for &v in values {
            m.n += 1.0;
            let d = v as f64 - m.mean;
            m.mean += d / m.n;
            m.m2 += d * (v as f64 - m.mean);
        }
        m
    }

    fn merge(self, other: Moments) -> Moments {
        if other.n == 0.0 {
            return self;
        }
        if self.n == 0.0 {
            return other;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        Moments {
            n,
            mean: self.mean + d * other.n / n,
            m2: self.m2 + other.m2 + d * d * self.n * other.n / n,
        }
    }

    fn std(&self) -> f64 {
        (self.m2 / self.n).max(0.0).sqrt()
    }
}

/// Computes statistics over a stream of spectrograms, merged in stream order.
/// Callers must feed training-partition examples only.
pub fn compute_normalization_stats<'a, I>(spectrograms: I, mode: NormMode) -> Result<NormalizationStats>
where
    I: IntoIterator<Item = &'a Spectrogram>,
{
    let mut iter = spectrograms.into_iter().peekable();
    let first = iter
        .peek()
        .ok_or_else(|| Error::invalid("no spectrograms to compute statistics over"))?;
    let n_mels = first.n_mels();
    match mode {
        NormMode::PerSample => {
            iter.count();
            Ok(NormalizationStats::per_sample())
        }
        NormMode::Global => {
            let total = iter.fold(Moments::default(), |acc, s| acc.merge(Moments::of(s.0.iter())));
            NormalizationStats::new(mode, vec![total.mean], vec![total.std()])
        }
        NormMode::ChannelWise => {
            let mut per_bin = vec![Moments::default(); n_mels];
            for s in iter {
                if s.n_mels() != n_mels {
                    return Err(Error::invalid("spectrograms differ in mel bins"));
                }
                for (acc, row) in per_bin.iter_mut().zip(s.0.axis_iter(Axis(0))) {
                    *acc = acc.merge(Moments::of(row.iter()));
                }
            }
            NormalizationStats::new(
                mode,
                per_bin.iter().map(|m| m.mean).collect(),
                per_bin.iter().map(|m| m.std()).collect(),
            )
        }
    }
}

pub fn normalize(spec: &Spectrogram, stats: &NormalizationStats) -> Result<Spectrogram> {
    let mut out = spec.0.clone();
    match stats.mode {
        NormMode::Global => {
            let (m, s) = (stats.mean[0], stats.std[0]);
            out.mapv_inplace(|v| ((v as f64 - m) / s) as f32);
        }
        NormMode::ChannelWise => {
            if stats.mean.len() != spec.n_mels() {
                return Err(Error::invalid(format!(
                    "channel stats for {} bins, spectrogram has {}",
                    stats.mean.len(),
                    spec.n_mels()
                )));
            }
            for (mut row, (m, s)) in out.axis_iter_mut(Axis(0)).zip(stats.mean.iter().zip(&stats.std)) {
                row.mapv_inplace(|v| ((v as f64 - m) / s) as f32);
            }
        }
        NormMode::PerSample => {
            let own = Moments::of(spec.0.iter());
            let s = own.std().max(STD_EPSILON);
            out.mapv_inplace(|v| ((v as f64 - own.mean) / s) as f32);
        }
    }
    Ok(Spectrogram(out))
}

/// Inverse of [`normalize`] for the global and channel-wise modes.
pub fn denormalize(spec: &Spectrogram, stats: &NormalizationStats) -> Result<Spectrogram> {
    let mut out = spec.0.clone();
    match stats.mode {
        NormMode::Global => {
            let (m, s) = (stats.mean[0], stats.std[0]);
            out.mapv_inplace(|v| (v as f64 * s + m) as f32);
        }
        NormMode::ChannelWise => {
            for (mut row, (m, s)) in out.axis_iter_mut(Axis(0)).zip(stats.mean.iter().zip(&stats.std)) {
                row.mapv_inplace(|v| (v as f64 * s + m) as f32);
            }
        }
        NormMode::PerSample => {
            return Err(Error::invalid("per-sample normalisation has no stored inverse"));
        }
    }
    Ok(Spectrogram(out))
}
