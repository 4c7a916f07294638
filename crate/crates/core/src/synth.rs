//! Deterministic synthetic audio corpora.
//!
//! Each class is a harmonic tone complex with its own fundamental and
//! amplitude-modulation rate. A clip draws only its AM phase, duration and
//! additive Gaussian noise from the per-clip stream `(seed, clip index)`.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::manifest::{write_manifest, DatasetIndex};
use crate::pipeline::segment::segment_samples;
use crate::pipeline::spectrogram::{SpectrogramConfig, SpectrogramExtractor};
use crate::pipeline::wav::write_wav_pcm16;
use crate::rng::task_rng;
use crate::store::SpectrogramStore;
use crate::types::AudioClip;

/// Number of distinct family slots (semitone steps above the base pitch).
pub const FAMILY_SLOTS: usize = 73;
const BASE_HZ: f64 = 80.0;
const PARTIALS: [f64; 3] = [1.0, 0.5, 0.25];
const TONE_GAIN: f64 = 0.25;
const AM_DEPTH: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipsPerClass {
    Fixed(usize),
    PerClass(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationDist {
    Fixed(f64),
    Uniform { lo: f64, hi: f64 },
}

/// Signal family of one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassFamily {
    pub fundamental_hz: f64,
    pub am_rate_hz: f64,
}

impl ClassFamily {
    pub fn from_slot(slot: usize) -> Self {
        ClassFamily {
            fundamental_hz: BASE_HZ * 2f64.powf(slot as f64 / 12.0),
            am_rate_hz: 1.5 + 0.75 * (slot % 7) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub name: String,
    pub n_classes: usize,
    pub clips_per_class: ClipsPerClass,
    pub duration: DurationDist,
    pub noise_std: f64,
    pub sample_rate: u32,
    /// One family slot per class, pairwise distinct.
    pub family_slots: Vec<usize>,
    pub seed: u64,
}

impl SynthSpec {
    /// 10 balanced classes, 60 clips each, fixed 5 s.
    pub fn synth_fixed() -> Self {
        SynthSpec {
            name: "synth-fixed".into(),
            n_classes: 10,
            clips_per_class: ClipsPerClass::Fixed(60),
            duration: DurationDist::Fixed(5.0),
            noise_std: 0.05,
            sample_rate: 16_000,
            family_slots: (0..10).map(|i| 3 + 7 * i).collect(),
            seed: 1,
        }
    }

    /// Variable-length (3-12 s), imbalanced 30-120 clips per class.
    pub fn synth_var() -> Self {
        SynthSpec {
            name: "synth-var".into(),
            n_classes: 10,
            clips_per_class: ClipsPerClass::PerClass((0..10).map(|i| 30 + 10 * i).collect()),
            duration: DurationDist::Uniform { lo: 3.0, hi: 12.0 },
            noise_std: 0.05,
            sample_rate: 16_000,
            family_slots: (0..10).map(|i| 5 + 7 * i).collect(),
            seed: 2,
        }
    }

    /// Larger training corpus whose families avoid every `synth-fixed` slot.
    pub fn synth_source() -> Self {
        SynthSpec {
            name: "synth-source".into(),
            n_classes: 50,
            clips_per_class: ClipsPerClass::Fixed(20),
            duration: DurationDist::Fixed(5.0),
            noise_std: 0.05,
            sample_rate: 16_000,
            family_slots: (0..FAMILY_SLOTS).filter(|s| s % 7 != 3).take(50).collect(),
            seed: 3,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "synth-fixed" => Ok(Self::synth_fixed()),
            "synth-var" => Ok(Self::synth_var()),
            "synth-source" => Ok(Self::synth_source()),
            other => Err(Error::invalid(format!(
                "unknown preset `{other}` (expected synth-fixed, synth-var or synth-source)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 {
            return Err(Error::invalid("synthetic corpus needs at least one class"));
        }
        if self.family_slots.len() != self.n_classes {
            return Err(Error::invalid("need exactly one family slot per class"));
        }
        let mut slots = self.family_slots.clone();
        slots.sort_unstable();
        slots.dedup();
        if slots.len() != self.n_classes || slots.iter().any(|&s| s >= FAMILY_SLOTS) {
            return Err(Error::invalid("family slots must be distinct and below FAMILY_SLOTS"));
        }
        if let ClipsPerClass::PerClass(v) = &self.clips_per_class {
            if v.len() != self.n_classes {
                return Err(Error::invalid("per-class clip counts must match n_classes"));
            }
        }
        let ok = |d: f64| d > 0.0 && d <= 600.0;
        let durations_ok = match self.duration {
            DurationDist::Fixed(d) => ok(d),
            DurationDist::Uniform { lo, hi } => ok(lo) && ok(hi) && lo <= hi,
        };
        if !durations_ok {
            return Err(Error::invalid("durations must lie in (0, 600] s"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) || self.sample_rate == 0 {
            return Err(Error::invalid(
                "noise must be finite and non-negative, sample rate positive",
            ));
        }
        Ok(())
    }

    pub fn class_label(&self, class: usize) -> String {
        format!("tone{:02}", self.family_slots[class])
    }

    pub fn clips_in_class(&self, class: usize) -> usize {
        match &self.clips_per_class {
            ClipsPerClass::Fixed(n) => *n,
            ClipsPerClass::PerClass(v) => v[class],
        }
    }

    /// `(class, clip-within-class)` for every clip, in generation order.
    pub fn clip_slots(&self) -> Vec<(usize, usize)> {
        (0..self.n_classes)
            .flat_map(|c| (0..self.clips_in_class(c)).map(move |i| (c, i)))
            .collect()
    }

    pub fn clip_id(&self, class: usize, index: usize) -> String {
        format!("{}_{index:04}", self.class_label(class))
    }
}

/// Renders clip number `global_index` of class `class`. Returns the waveform
/// and its duration in seconds.
pub fn render_clip(spec: &SynthSpec, class: usize, global_index: usize) -> (Vec<f32>, f64) {
    let mut rng = task_rng(spec.seed, global_index as u64);
    let duration = match spec.duration {
        DurationDist::Fixed(d) => d,
        DurationDist::Uniform { lo, hi } => (rng.gen_range(lo..=hi) * 1000.0).round() / 1000.0,
    };
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let fam = ClassFamily::from_slot(spec.family_slots[class]);
    let rate = spec.sample_rate as f64;
    let nyquist = rate / 2.0;
    let n = (duration * rate).round() as usize;
    let noise = Normal::new(0.0, spec.noise_std).expect("finite noise level");
    let mut out: Vec<f32> = (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            let env = (1.0 + AM_DEPTH * (std::f64::consts::TAU * fam.am_rate_hz * t + phase).sin()) / (1.0 + AM_DEPTH);
            let tone: f64 = PARTIALS
                .iter()
                .enumerate()
                .filter(|(p, _)| fam.fundamental_hz * ((*p + 1) as f64) < nyquist)
                .map(|(p, a)| a * (std::f64::consts::TAU * fam.fundamental_hz * (p + 1) as f64 * t).sin())
                .sum();
            (TONE_GAIN * env * tone + noise.sample(&mut rng)) as f32
        })
        .collect();
    let peak = out.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if peak > 0.99 {
        let g = 0.99 / peak;
        out.iter_mut().for_each(|v| *v *= g);
    }
    (out, duration)
}

/// Writes `<out_dir>/audio/*.wav` and `<out_dir>/manifest.csv`.
pub fn generate_synthetic_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetIndex> {
    spec.validate()?;
    let audio = out_dir.join("audio");
    std::fs::create_dir_all(&audio).map_err(|e| Error::io(&audio, e))?;
    let clips: Vec<AudioClip> = spec
        .clip_slots()
        .into_par_iter()
        .enumerate()
        .map(|(g, (class, i))| {
            let (wave, duration) = render_clip(spec, class, g);
            let id = spec.clip_id(class, i);
            let rel = format!("audio/{id}.wav");
            write_wav_pcm16(&out_dir.join(&rel), &wave, spec.sample_rate)?;
            AudioClip::new(
                id,
                spec.name.clone(),
                spec.class_label(class),
                duration,
                spec.sample_rate,
                rel,
            )
        })
        .collect::<Result<_>>()?;
    let path = out_dir.join("manifest.csv");
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_manifest(&clips, file)?;
    DatasetIndex::from_clips(spec.name.clone(), clips)
}

/// Renders the corpus straight into an in-memory store, skipping WAV files.
pub fn synthesize_store(spec: &SynthSpec, config: &SpectrogramConfig) -> Result<(SpectrogramStore, DatasetIndex)> {
    spec.validate()?;
    if spec.sample_rate != config.sample_rate_hz {
        return Err(Error::invalid(
            "synthetic sample rate must match the spectrogram config",
        ));
    }
    let extractor = SpectrogramExtractor::new(config)?;
    let rendered: Vec<(AudioClip, Vec<crate::types::Spectrogram>)> = spec
        .clip_slots()
        .into_par_iter()
        .enumerate()
        .map(|(g, (class, i))| {
            let (wave, duration) = render_clip(spec, class, g);
            let subs = segment_samples(&wave, spec.sample_rate, config.clip_length_s)?
                .iter()
                .map(|seg| extractor.compute(seg, spec.sample_rate))
                .collect::<Result<Vec<_>>>()?;
            let clip = AudioClip::new(
                spec.clip_id(class, i),
                spec.name.clone(),
                spec.class_label(class),
                duration,
                spec.sample_rate,
                String::new(),
            )?;
            Ok((clip, subs))
        })
        .collect::<Result<_>>()?;
    let mut store = SpectrogramStore::new();
    let mut clips = Vec::with_capacity(rendered.len());
    for (clip, subs) in rendered {
        store.insert_clip(&spec.name, &clip.clip_id, &clip.class_label, subs)?;
        clips.push(clip);
    }
    Ok((store, DatasetIndex::from_clips(spec.name.clone(), clips)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::manifest::ingest_manifest_file;

    fn tiny(dur: DurationDist) -> SynthSpec {
        SynthSpec {
            name: "tiny".into(),
            n_classes: 3,
            clips_per_class: ClipsPerClass::PerClass(vec![2, 3, 1]),
            duration: dur,
            noise_std: 0.05,
            sample_rate: 8_000,
            family_slots: vec![10, 20, 30],
            seed: 42,
        }
    }

    #[test]
    fn presets_are_valid_and_disjoint() {
        for p in ["synth-fixed", "synth-var", "synth-source"] {
            SynthSpec::preset(p).unwrap().validate().unwrap();
        }
        let fixed = SynthSpec::synth_fixed();
        let source = SynthSpec::synth_source();
        assert!(fixed.family_slots.iter().all(|s| !source.family_slots.contains(s)));
        assert_eq!(fixed.clip_slots().len(), 600);
        let var = SynthSpec::synth_var();
        assert_eq!(var.clips_in_class(0), 30);
        assert_eq!(var.clips_in_class(9), 120);
        assert!(SynthSpec::preset("nope").is_err());
    }

    #[test]
    fn validation_rejects_duplicate_families() {
        let mut s = tiny(DurationDist::Fixed(1.0));
        s.family_slots = vec![1, 1, 2];
        assert!(s.validate().is_err());
        let mut s = tiny(DurationDist::Fixed(700.0));
        assert!(s.validate().is_err());
        s.duration = DurationDist::Fixed(1.0);
        assert!(s.validate().is_ok());
    }

    #[test]
    fn generates_wavs_and_manifest_deterministically() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let spec = tiny(DurationDist::Fixed(1.0));
        let idx = generate_synthetic_dataset(&spec, a.path()).unwrap();
        generate_synthetic_dataset(&spec, b.path()).unwrap();
        assert_eq!(idx.clips.len(), 6);
        assert!(idx.fixed_length);
        let back = ingest_manifest_file("tiny", &a.path().join("manifest.csv")).unwrap();
        assert_eq!(back.clips.len(), 6);
        for clip in &idx.clips {
            let rel = Path::new(&clip.source_path);
            assert_eq!(
                std::fs::read(a.path().join(rel)).unwrap(),
                std::fs::read(b.path().join(rel)).unwrap()
            );
        }
        assert_eq!(
            std::fs::read(a.path().join("manifest.csv")).unwrap(),
            std::fs::read(b.path().join("manifest.csv")).unwrap()
        );
    }

    #[test]
    fn uniform_durations_give_variable_index() {
        let spec = tiny(DurationDist::Uniform { lo: 3.0, hi: 12.0 });
        let cfg = SpectrogramConfig {
            sample_rate_hz: 8_000,
            ..SpectrogramConfig::desk()
        };
        let (store, idx) = synthesize_store(&spec, &cfg).unwrap();
        assert!(!idx.fixed_length);
        for clip in &idx.clips {
            assert!((3.0..=12.0).contains(&clip.duration_s));
            let rec = store.clip("tiny", &clip.clip_id).unwrap();
            assert_eq!(rec.subclips.len(), crate::pipeline::subclip_count(clip.duration_s, 5.0));
        }
    }
}
