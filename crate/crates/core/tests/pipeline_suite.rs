use std::collections::BTreeMap;
use std::path::Path;

use fsaudio_core::pipeline::manifest::{prune_dataset, DatasetIndex};
use fsaudio_core::pipeline::segment::{segment_clip, segment_samples, subclip_count};
use fsaudio_core::pipeline::spectrogram::{compute_spectrogram, SpectrogramConfig};
use fsaudio_core::synth::{generate_synthetic_dataset, render_clip, ClipsPerClass, DurationDist, SynthSpec};
use fsaudio_core::AudioClip;
use proptest::prelude::*;

fn index(clips: &[(&str, f64)]) -> DatasetIndex {
    let clips = clips
        .iter()
        .enumerate()
        .map(|(i, (label, d))| AudioClip::new(format!("clip{i:04}"), "fx", *label, *d, 16_000, "x.wav").unwrap())
        .collect();
    DatasetIndex::from_clips("fx", clips).unwrap()
}

fn inventory(ix: &DatasetIndex) -> BTreeMap<String, usize> {
    ix.class_inventory.clone()
}

#[test]
fn prune_fixture_keeps_a_and_c() {
    let mut clips = Vec::new();
    for (label, n) in [("A", 60), ("B", 49), ("C", 55)] {
        clips.extend(std::iter::repeat_n((label, 3.0), n));
    }
    // clips over the limit count against their class before the class rule
    clips.extend(std::iter::repeat_n(("B", 30.0), 5));
    let pruned = prune_dataset(&index(&clips), 10.0, 50).unwrap();
    let kept: Vec<&str> = pruned.class_inventory.keys().map(String::as_str).collect();
    assert_eq!(kept, ["A", "C"]);
    assert_eq!(pruned.clips.len(), 115);
}

proptest! {
    #[test]
    fn segments_reconstruct_the_waveform(
        samples in prop::collection::vec(-1.0f32..1.0, 1..5000),
        rate in prop::sample::select(vec![100u32, 441, 1000, 16_000]),
        length_s in 0.01f64..2.0,
    ) {
        let seg = (length_s * rate as f64).round() as usize;
        prop_assume!(seg > 0);
        let parts = segment_samples(&samples, rate, length_s).unwrap();
        prop_assert_eq!(parts.len(), samples.len().div_ceil(seg));
        prop_assert!(parts.iter().all(|p| p.len() == seg));
        let joined: Vec<f32> = parts.concat();
        prop_assert_eq!(&joined[..samples.len()], &samples[..]);
        prop_assert!(joined[samples.len()..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn subclip_counts_cover_the_duration(duration in 0.01f64..600.0, length in 0.5f64..10.0) {
        let clip = AudioClip::new("c", "d", "x", duration, 16_000, "c.wav").unwrap();
        let subs = segment_clip(&clip, length).unwrap();
        let n = subs.len();
        prop_assert_eq!(n, subclip_count(duration, length));
        prop_assert!(n as f64 * length >= duration - 1e-6);
        prop_assert!(n == 1 || ((n - 1) as f64) * length < duration);
        prop_assert!(subs.iter().enumerate().all(|(i, s)| s.index == i && s.parent_clip_id == "c"));
    }

    #[test]
    fn prune_is_idempotent(
        clips in prop::collection::vec((0usize..6, 0.5f64..40.0), 1..200),
        max_duration in 1.0f64..40.0,
        min_count in 0usize..30,
    ) {
        let labels: Vec<String> = (0..6).map(|c| format!("k{c}")).collect();
        let clips: Vec<(&str, f64)> = clips.iter().map(|(c, d)| (labels[*c].as_str(), *d)).collect();
        let ix = index(&clips);
        if let Ok(once) = prune_dataset(&ix, max_duration, min_count) {
            let twice = prune_dataset(&once, max_duration, min_count).unwrap();
            prop_assert_eq!(inventory(&once), inventory(&twice));
            prop_assert_eq!(once.clips.len(), twice.clips.len());
            prop_assert!(once.clips.iter().all(|c| c.duration_s <= max_duration));
            prop_assert!(once.class_inventory.values().all(|&n| n >= min_count));
        }
    }
}

fn mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

/// Energy per mel band from a direct O(n^2) DFT of the whole clip. Band `m`
/// is a triangle in Hz over mel edges `m..m+2` of `n_mels + 2` equally
/// spaced edges.
fn dft_band_profile(x: &[f32], rate: f64, n_mels: usize) -> Vec<f64> {
    let n = x.len();
    let top = mel(rate / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| 700.0 * ((top * i as f64 / (n_mels + 1) as f64 / 1127.0).exp() - 1.0))
        .collect();
    let mut bands = vec![0.0; n_mels];
    for k in 1..n / 2 {
        let w = std::f64::consts::TAU * k as f64 / n as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (t, &v) in x.iter().enumerate() {
            let a = w * t as f64;
            re += v as f64 * a.cos();
            im -= v as f64 * a.sin();
        }
        let f = k as f64 * rate / n as f64;
        for (b, band) in bands.iter_mut().enumerate() {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            *band += w * (re * re + im * im);
        }
    }
    bands
}

fn pipeline_band_profile(x: &[f32], config: &SpectrogramConfig) -> Vec<f64> {
    let s = compute_spectrogram(x, config.sample_rate_hz, config).unwrap().0;
    s.rows()
        .into_iter()
        .map(|r| r.iter().map(|v| (*v as f64).exp()).sum::<f64>() / r.len() as f64)
        .collect()
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn noiseless(seed: u64) -> SynthSpec {
    SynthSpec {
        name: "quiet".into(),
        n_classes: 3,
        clips_per_class: ClipsPerClass::Fixed(2),
        duration: DurationDist::Fixed(1.0),
        noise_std: 0.0,
        sample_rate: 16_000,
        family_slots: vec![4, 20, 41],
        seed,
    }
}

#[test]
fn noiseless_clips_of_one_class_share_their_band_profile() {
    let spec = noiseless(9);
    let config = SpectrogramConfig::desk();
    for class in 0..spec.n_classes {
        let (a, _) = render_clip(&spec, class, 2 * class);
        let (b, _) = render_clip(&spec, class, 2 * class + 1);
        assert_ne!(a, b, "the AM phase should differ between clips");
        let (oa, ob) = (dft_band_profile(&a, 16_000.0, 32), dft_band_profile(&b, 16_000.0, 32));
        let oracle = correlation(&oa, &ob);
        let (pa, pb) = (pipeline_band_profile(&a, &config), pipeline_band_profile(&b, &config));
        let pipeline = correlation(&pa, &pb);
        let agreement = correlation(&oa, &pa);
        assert!(oracle > 0.99, "class {class}: oracle correlation {oracle}");
        assert!(pipeline > 0.99, "class {class}: pipeline correlation {pipeline}");
        assert!(agreement > 0.95, "class {class}: pipeline vs oracle {agreement}");
    }
    // different classes do not share a profile
    let (a, _) = render_clip(&spec, 0, 0);
    let (c, _) = render_clip(&spec, 2, 4);
    let cross = correlation(&pipeline_band_profile(&a, &config), &pipeline_band_profile(&c, &config));
    assert!(cross < 0.5, "classes 0 and 2 correlate at {cross}");
}

fn tree_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn same_seed_gives_a_byte_identical_corpus() {
    let mut spec = noiseless(5);
    spec.noise_std = 0.05;
    spec.duration = DurationDist::Uniform { lo: 0.5, hi: 2.0 };
    let (a, b, c) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    generate_synthetic_dataset(&spec, a.path()).unwrap();
    generate_synthetic_dataset(&spec, b.path()).unwrap();
    let (ta, tb) = (tree_bytes(a.path()), tree_bytes(b.path()));
    assert_eq!(ta.len(), 1 + 6);
    assert_eq!(ta, tb);
    spec.seed += 1;
    generate_synthetic_dataset(&spec, c.path()).unwrap();
    assert_ne!(tree_bytes(c.path()), ta);
}
