//! Dataset manifests: ingestion, validation and pruning.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{class_counts, AudioClip};

pub const MANIFEST_COLUMNS: [&str; 5] = ["clip_id", "class", "duration_s", "sample_rate", "path"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub dataset_id: String,
    pub clips: Vec<AudioClip>,
    pub class_inventory: BTreeMap<String, usize>,
    pub fixed_length: bool,
}

impl DatasetIndex {
    pub fn from_clips(dataset_id: impl Into<String>, clips: Vec<AudioClip>) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::EmptyManifest);
        }
        let mut seen = HashSet::new();
        for c in &clips {
            c.validate()?;
            if !seen.insert(c.clip_id.as_str()) {
                return Err(Error::DuplicateClip(c.clip_id.clone()));
            }
        }
        let class_inventory = class_counts(clips.iter().map(|c| c.class_label.as_str()));
        let first = clips[0].duration_s;
        let fixed_length = clips
            .iter()
            .all(|c| (c.duration_s - first).abs() <= 1e-9 * first.max(1.0));
        Ok(DatasetIndex {
            dataset_id: dataset_id.into(),
            clips,
            class_inventory,
            fixed_length,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.class_inventory.len()
    }
}

/// Parses a manifest stream. Records are numbered from 1, excluding the header.
pub fn ingest_dataset<R: Read>(dataset_id: &str, reader: R) -> Result<DatasetIndex> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().all(|h| h.is_empty()) {
        return Err(Error::EmptyManifest);
    }
    let mut cols = [0usize; 5];
    for (slot, name) in cols.iter_mut().zip(MANIFEST_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::invalid(format!("manifest header lacks column `{name}`")))?;
    }

    let mut clips = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let record = i + 1;
        let rec = rec?;
        let field = |idx: usize, name: &str| -> Result<String> {
            match rec.get(cols[idx]) {
                Some(v) if !v.is_empty() => {
                    if v.contains(['\t', '\n', '\r']) {
                        Err(Error::BadRecord {
                            record,
                            message: format!("field `{name}` contains a tab or newline"),
                        })
                    } else {
                        Ok(v.to_string())
                    }
                }
                _ => Err(Error::BadRecord {
                    record,
                    message: format!("missing field `{name}`"),
                }),
            }
        };
        let clip_id = field(0, "clip_id")?;
        let class = field(1, "class")?;
        let duration: f64 = field(2, "duration_s")?.parse().map_err(|_| Error::BadRecord {
            record,
            message: "duration_s is not a number".into(),
        })?;
        let rate: u32 = field(3, "sample_rate")?.parse().map_err(|_| Error::BadRecord {
            record,
            message: "sample_rate is not a positive integer".into(),
        })?;
        let path = field(4, "path")?;
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::BadRecord {
                record,
                message: format!("non-positive duration {duration}"),
            });
        }
        if rate == 0 {
            return Err(Error::BadRecord {
                record,
                message: "sample_rate must be positive".into(),
            });
        }
        if !seen.insert(clip_id.clone()) {
            return Err(Error::DuplicateClip(clip_id));
        }
        clips.push(AudioClip {
            clip_id,
            dataset_id: dataset_id.to_string(),
            class_label: class,
            duration_s: duration,
            sample_rate: rate,
            source_path: path,
        });
    }
    DatasetIndex::from_clips(dataset_id, clips)
}

/// Reads a manifest file; relative audio paths are resolved against its directory.
pub fn ingest_manifest_file(dataset_id: &str, path: &Path) -> Result<DatasetIndex> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut index = ingest_dataset(dataset_id, file)?;
    let base = path.parent().unwrap_or(Path::new("."));
    for clip in &mut index.clips {
        let p = Path::new(&clip.source_path);
        if p.is_relative() {
            clip.source_path = base.join(p).to_string_lossy().into_owned();
        }
    }
    Ok(index)
}

pub fn write_manifest<W: Write>(clips: &[AudioClip], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(MANIFEST_COLUMNS)?;
    for c in clips {
        w.write_record([
            c.clip_id.as_str(),
            c.class_label.as_str(),
            &format!("{}", c.duration_s),
            &c.sample_rate.to_string(),
            c.source_path.as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<manifest>", e))?;
    Ok(())
}

/// Drops clips longer than `max_duration_s`, then drops classes left with
/// fewer than `min_class_count` clips. One pass of each, in that order.
pub fn prune_dataset(index: &DatasetIndex, max_duration_s: f64, min_class_count: usize) -> Result<DatasetIndex> {
    if max_duration_s.is_nan() || max_duration_s <= 0.0 {
        return Err(Error::invalid("max_duration must be positive"));
    }
    let short: Vec<&AudioClip> = index.clips.iter().filter(|c| c.duration_s <= max_duration_s).collect();
    let counts = class_counts(short.iter().map(|c| c.class_label.as_str()));
    let kept: Vec<AudioClip> = short
        .into_iter()
        .filter(|c| counts[&c.class_label] >= min_class_count)
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(Error::PrunedEverything);
    }
    DatasetIndex::from_clips(index.dataset_id.clone(), kept)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "clip_id,class,duration_s,sample_rate,path\n";

    fn index_from(durations_by_class: &[(&str, &[f64])]) -> DatasetIndex {
        let mut clips = Vec::new();
        for (label, durs) in durations_by_class {
            for (i, d) in durs.iter().enumerate() {
                clips.push(AudioClip::new(format!("{label}-{i}"), "fx", *label, *d, 16000, "x.wav").unwrap());
            }
        }
        DatasetIndex::from_clips("fx", clips).unwrap()
    }

    #[test]
    fn esc50_shaped_manifest_is_fixed_length() {
        let mut text = HEADER.to_string();
        for i in 0..2000 {
            text.push_str(&format!("c{i},class{},5,44100,audio/{i}.wav\n", i % 50));
        }
        let idx = ingest_dataset("esc50", text.as_bytes()).unwrap();
        assert_eq!(idx.clips.len(), 2000);
        assert_eq!(idx.n_classes(), 50);
        assert!(idx.fixed_length);
        assert!(idx.class_inventory.values().all(|&n| n == 40));
    }

    #[test]
    fn empty_stream_is_rejected() {
        let err = ingest_dataset("x", "".as_bytes()).unwrap_err();
        assert_eq!(err.to_string(), "empty manifest");
        let err = ingest_dataset("x", HEADER.as_bytes()).unwrap_err();
        assert_eq!(err.to_string(), "empty manifest");
    }

    #[test]
    fn missing_class_names_the_record() {
        let text = format!("{HEADER}a,dog,1,16000,a.wav\nb,,1,16000,b.wav\nc,cat,2,16000,c.wav\n");
        match ingest_dataset("x", text.as_bytes()).unwrap_err() {
            Error::BadRecord { record, message } => {
                assert_eq!(record, 2);
                assert!(message.contains("class"));
            }
            other => panic!("unexpected {other}"),
        }
        let short = format!("{HEADER}a,dog,1,16000,a.wav\nb\n");
        assert!(matches!(
            ingest_dataset("x", short.as_bytes()),
            Err(Error::BadRecord { record: 2, .. })
        ));
    }

    #[test]
    fn duplicate_and_bad_duration() {
        let dup = format!("{HEADER}a,dog,1,16000,a.wav\na,dog,1,16000,b.wav\n");
        assert!(matches!(
            ingest_dataset("x", dup.as_bytes()),
            Err(Error::DuplicateClip(_))
        ));
        let zero = format!("{HEADER}a,dog,0,16000,a.wav\n");
        assert!(matches!(
            ingest_dataset("x", zero.as_bytes()),
            Err(Error::BadRecord { record: 1, .. })
        ));
    }

    #[test]
    fn variable_length_detected() {
        let text = format!("{HEADER}a,dog,1,16000,a.wav\nb,dog,2.5,16000,b.wav\n");
        assert!(!ingest_dataset("x", text.as_bytes()).unwrap().fixed_length);
    }

    #[test]
    fn manifest_write_then_ingest() {
        let idx = index_from(&[("a", &[1.0, 2.0]), ("b", &[3.5])]);
        let mut buf = Vec::new();
        write_manifest(&idx.clips, &mut buf).unwrap();
        assert_eq!(ingest_dataset("fx", buf.as_slice()).unwrap(), idx);
    }

    #[test]
    fn prune_fixture_keeps_a_and_c() {
        // A: 60 short + 5 long, B: 49 short + 10 long, C: 55 short.
        let mut a = vec![10.0; 60];
        a.extend([200.0; 5]);
        let mut b = vec![30.0; 49];
        b.extend([181.0; 10]);
        let c = vec![180.0; 55];
        let idx = index_from(&[("A", &a), ("B", &b), ("C", &c)]);
        let pruned = prune_dataset(&idx, 180.0, 50).unwrap();
        let classes: Vec<_> = pruned.class_inventory.keys().cloned().collect();
        assert_eq!(classes, vec!["A", "C"]);
        assert_eq!(pruned.class_inventory["A"], 60);
        assert_eq!(pruned.class_inventory["C"], 55);
        assert!(pruned.clips.iter().all(|c| c.duration_s <= 180.0));
    }

    #[test]
    fn prune_identity_and_empty() {
        let idx = index_from(&[("A", &[1.0, 2.0]), ("B", &[700.0])]);
        assert_eq!(prune_dataset(&idx, f64::INFINITY, 0).unwrap(), idx);
        assert!(matches!(prune_dataset(&idx, 0.5, 0), Err(Error::PrunedEverything)));
        assert!(prune_dataset(&idx, 0.0, 0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn prune_is_idempotent(
            durs in proptest::collection::vec((0usize..6, 0.1f64..400.0), 1..200),
            max in 1.0f64..400.0,
            min_count in 0usize..12,
        ) {
            let clips: Vec<AudioClip> = durs
                .iter()
                .enumerate()
                .map(|(i, (c, d))| AudioClip::new(format!("k{i}"), "p", format!("c{c}"), *d, 8000, "x").unwrap())
                .collect();
            let idx = DatasetIndex::from_clips("p", clips).unwrap();
            if let Ok(once) = prune_dataset(&idx, max, min_count) {
                let twice = prune_dataset(&once, max, min_count).unwrap();
                proptest::prop_assert_eq!(twice, once);
            }
        }
    }
}
