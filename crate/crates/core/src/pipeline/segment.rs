//! Fixed-length sub-clip segmentation. The last segment is zero-padded.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::types::{AudioClip, SubClip};

/// Number of `length_s` segments covering `duration_s`; at least one.
pub fn subclip_count(duration_s: f64, length_s: f64) -> usize {
    let ratio = duration_s / length_s;
    // absorb representation error so that e.g. 10.000000000001 / 5 stays 2
    ((ratio - 1e-9).ceil() as usize).max(1)
}

pub fn segment_clip(clip: &AudioClip, length_s: f64) -> Result<Vec<SubClip>> {
    if !(length_s.is_finite() && length_s > 0.0) {
        return Err(Error::invalid(format!(
            "sub-clip length must be positive, got {length_s}"
        )));
    }
    Ok((0..subclip_count(clip.duration_s, length_s))
        .map(|index| SubClip {
            parent_clip_id: clip.clip_id.clone(),
            index,
            length_s,
            class_label: clip.class_label.clone(),
            spectrogram_ref: String::new(),
        })
        .collect())
}

/// Unpadded sample range of segment `index`.
pub fn subclip_range(index: usize, segment_len: usize, total: usize) -> Range<usize> {
    let start = (index * segment_len).min(total);
    start..((index + 1) * segment_len).min(total)
}

/// Splits samples into segments of exactly `round(length_s * rate)` samples.
pub fn segment_samples(samples: &[f32], sample_rate: u32, length_s: f64) -> Result<Vec<Vec<f32>>> {
    if !(length_s.is_finite() && length_s > 0.0) {
        return Err(Error::invalid(format!(
            "sub-clip length must be positive, got {length_s}"
        )));
    }
    let seg = (length_s * sample_rate as f64).round() as usize;
    if seg == 0 {
        return Err(Error::invalid("sub-clip shorter than one sample"));
    }
    let n = samples.len().div_ceil(seg).max(1);
    Ok((0..n)
        .map(|i| {
            let mut out = samples[subclip_range(i, seg, samples.len())].to_vec();
            out.resize(seg, 0.0);
            out
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(d: f64) -> AudioClip {
        AudioClip::new("p", "d", "lbl", d, 16000, "p.wav").unwrap()
    }

    #[test]
    fn twelve_seconds_gives_three() {
        let subs = segment_clip(&clip(12.0), 5.0).unwrap();
        assert_eq!(subs.len(), 3);
        assert_eq!(subs.iter().map(|s| s.index).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(subs.iter().all(|s| s.class_label == "lbl" && s.parent_clip_id == "p"));

        let samples = vec![1.0f32; 12 * 100];
        let segs = segment_samples(&samples, 100, 5.0).unwrap();
        assert_eq!(segs.len(), 3);
        assert!(segs.iter().all(|s| s.len() == 500));
        assert_eq!(segs[2].iter().filter(|&&x| x == 1.0).count(), 200);
        assert_eq!(segs[2].iter().filter(|&&x| x == 0.0).count(), 300);
    }

    #[test]
    fn exact_length_gives_one_unpadded() {
        assert_eq!(segment_clip(&clip(5.0), 5.0).unwrap().len(), 1);
        let segs = segment_samples(&[0.5; 500], 100, 5.0).unwrap();
        assert_eq!(segs, vec![vec![0.5; 500]]);
    }

    #[test]
    fn short_clip_is_padded() {
        assert_eq!(segment_clip(&clip(0.3), 5.0).unwrap().len(), 1);
        let segs = segment_samples(&[0.25; 30], 100, 5.0).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].len(), 500);
        assert_eq!(&segs[0][..30], &[0.25; 30]);
        assert!(segs[0][30..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_bad_length() {
        assert!(segment_clip(&clip(1.0), 0.0).is_err());
        assert!(segment_samples(&[0.0], 100, -1.0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn segments_reconstruct_parent(len in 1usize..5000, seg_s in 0.05f64..3.0) {
            let rate = 100u32;
            let samples: Vec<f32> = (0..len).map(|i| i as f32).collect();
            let segs = segment_samples(&samples, rate, seg_s).unwrap();
            let seg_len = (seg_s * rate as f64).round() as usize;
            let mut rebuilt = Vec::new();
            for (i, s) in segs.iter().enumerate() {
                let r = subclip_range(i, seg_len, len);
                rebuilt.extend_from_slice(&s[..r.len()]);
                proptest::prop_assert!(s[r.len()..].iter().all(|&x| x == 0.0));
            }
            proptest::prop_assert_eq!(rebuilt, samples);
            proptest::prop_assert_eq!(segs.len(), len.div_ceil(seg_len));
        }
    }
}
