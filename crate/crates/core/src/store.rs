//! In-memory view of cached spectrograms, grouped by dataset and parent clip.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::cache::{read_spectrogram, CacheManifest};
use crate::pipeline::normalize::{compute_normalization_stats, normalize};
use crate::types::{subclip_id, NormMode, NormalizationStats, Spectrogram};

/// Class label and indexed sub-clips of one parent clip while loading.
type Grouped<'a> = (&'a str, Vec<(usize, Spectrogram)>);

#[derive(Debug, Clone)]
pub struct ClipRecord {
    pub class_label: String,
    /// Sub-clips in index order.
    pub subclips: Vec<Arc<Spectrogram>>,
}

#[derive(Debug, Clone, Default)]
pub struct SpectrogramStore {
    datasets: BTreeMap<String, BTreeMap<String, ClipRecord>>,
}

/// Statistics together with the sub-clips they were computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub stats: NormalizationStats,
    pub provenance: Vec<String>,
}

impl SpectrogramStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_clip(
        &mut self,
        dataset_id: &str,
        clip_id: &str,
        class_label: &str,
        subclips: Vec<Spectrogram>,
    ) -> Result<()> {
        if subclips.is_empty() {
            return Err(Error::invalid(format!("clip `{clip_id}` has no sub-clips")));
        }
        self.datasets.entry(dataset_id.to_string()).or_default().insert(
            clip_id.to_string(),
            ClipRecord {
                class_label: class_label.to_string(),
                subclips: subclips.into_iter().map(Arc::new).collect(),
            },
        );
        Ok(())
    }

    /// Loads the cached sub-clips of `manifest`, optionally restricted to a class set.
    pub fn load_cache(&mut self, manifest: &CacheManifest, classes: Option<&BTreeSet<String>>) -> Result<()> {
        let wanted: Vec<_> = manifest
            .entries
            .iter()
            .filter(|e| classes.is_none_or(|c| c.contains(&e.class)))
            .collect();
        let loaded: Vec<Spectrogram> = wanted
            .par_iter()
            .map(|e| read_spectrogram(&manifest.entry_path(e), Some(&manifest.config_hash)))
            .collect::<Result<_>>()?;
        let mut grouped: BTreeMap<&str, Grouped> = BTreeMap::new();
        for (e, spec) in wanted.iter().zip(loaded) {
            grouped
                .entry(e.parent_id.as_str())
                .or_insert((e.class.as_str(), Vec::new()))
                .1
                .push((e.index(), spec));
        }
        for (clip, (class, mut subs)) in grouped {
            subs.sort_by_key(|(i, _)| *i);
            self.insert_clip(
                &manifest.dataset_id,
                clip,
                class,
                subs.into_iter().map(|(_, s)| s).collect(),
            )?;
        }
        Ok(())
    }

    pub fn dataset_ids(&self) -> impl Iterator<Item = &str> {
        self.datasets.keys().map(String::as_str)
    }

    pub fn clip(&self, dataset_id: &str, clip_id: &str) -> Result<&ClipRecord> {
        self.datasets
            .get(dataset_id)
            .and_then(|d| d.get(clip_id))
            .ok_or_else(|| Error::MissingCacheEntry(format!("{dataset_id}/{clip_id}")))
    }

    pub fn subclip(&self, dataset_id: &str, clip_id: &str, index: usize) -> Result<Arc<Spectrogram>> {
        self.clip(dataset_id, clip_id)?
            .subclips
            .get(index)
            .cloned()
            .ok_or_else(|| Error::MissingCacheEntry(subclip_id(clip_id, index)))
    }

    /// class label -> (clip id, sub-clip count), both sorted.
    pub fn class_index(&self, dataset_id: &str) -> BTreeMap<String, Vec<(String, usize)>> {
        let mut out: BTreeMap<String, Vec<(String, usize)>> = BTreeMap::new();
        if let Some(d) = self.datasets.get(dataset_id) {
            for (clip, rec) in d {
                out.entry(rec.class_label.clone())
                    .or_default()
                    .push((clip.clone(), rec.subclips.len()));
            }
        }
        out
    }

    /// Iterates `(provenance id, spectrogram)` for clips of the listed classes.
    pub fn iter_subclips<'a>(
        &'a self,
        dataset_id: &'a str,
        classes: &'a BTreeSet<String>,
    ) -> impl Iterator<Item = (String, &'a Arc<Spectrogram>)> + 'a {
        self.datasets
            .get(dataset_id)
            .into_iter()
            .flat_map(|d| d.iter())
            .filter(move |(_, rec)| classes.contains(&rec.class_label))
            .flat_map(move |(clip, rec)| {
                rec.subclips
                    .iter()
                    .enumerate()
                    .map(move |(i, s)| (format!("{dataset_id}/{}", subclip_id(clip, i)), s))
            })
    }

    /// Statistics over the given (dataset, classes) partitions, in sorted order.
    pub fn partition_stats(&self, partitions: &[(String, BTreeSet<String>)], mode: NormMode) -> Result<StatsRecord> {
        let mut provenance = Vec::new();
        let mut specs = Vec::new();
        for (ds, classes) in partitions {
            for (id, s) in self.iter_subclips(ds, classes) {
                provenance.push(id);
                specs.push(s.as_ref());
            }
        }
        let stats = compute_normalization_stats(specs, mode)?;
        Ok(StatsRecord { stats, provenance })
    }

    /// Returns a copy with every sub-clip normalised.
    pub fn normalized(&self, stats: &NormalizationStats) -> Result<SpectrogramStore> {
        let mut out = SpectrogramStore::new();
        for (ds, clips) in &self.datasets {
            let done: Vec<(String, ClipRecord)> = clips
                .par_iter()
                .map(|(clip, rec)| {
                    let subclips = rec
                        .subclips
                        .iter()
                        .map(|s| normalize(s, stats).map(Arc::new))
                        .collect::<Result<_>>()?;
                    Ok((
                        clip.clone(),
                        ClipRecord {
                            class_label: rec.class_label.clone(),
                            subclips,
                        },
                    ))
                })
                .collect::<Result<_>>()?;
            out.datasets.insert(ds.clone(), done.into_iter().collect());
        }
        Ok(out)
    }

    pub fn input_shape(&self) -> Option<(usize, usize)> {
        self.datasets
            .values()
            .flat_map(|d| d.values())
            .next()
            .map(|r| r.subclips[0].shape())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn spec(v: f32) -> Spectrogram {
        Spectrogram(Array2::from_elem((2, 2), v))
    }

    #[test]
    fn stats_provenance_only_covers_requested_classes() {
        let mut store = SpectrogramStore::new();
        store
            .insert_clip("d", "t1", "train_a", vec![spec(0.0), spec(2.0)])
            .unwrap();
        store.insert_clip("d", "v1", "val_a", vec![spec(100.0)]).unwrap();
        store.insert_clip("d", "x1", "test_a", vec![spec(-100.0)]).unwrap();
        let train: BTreeSet<String> = ["train_a".to_string()].into();
        let rec = store.partition_stats(&[("d".into(), train)], NormMode::Global).unwrap();
        assert_eq!(rec.stats.mean, vec![1.0]);
        assert_eq!(rec.provenance, vec!["d/t1#0", "d/t1#1"]);
        assert!(rec.provenance.iter().all(|p| !p.contains("v1") && !p.contains("x1")));
    }

    #[test]
    fn normalized_store_and_lookup() {
        let mut store = SpectrogramStore::new();
        store.insert_clip("d", "c", "a", vec![spec(3.0)]).unwrap();
        let stats = NormalizationStats::new(NormMode::Global, vec![1.0], vec![2.0]).unwrap();
        let n = store.normalized(&stats).unwrap();
        assert_eq!(*n.subclip("d", "c", 0).unwrap(), spec(1.0));
        assert!(n.subclip("d", "c", 1).is_err());
        assert!(n.subclip("d", "zz", 0).is_err());
        assert_eq!(n.class_index("d")["a"], vec![("c".to_string(), 1)]);
    }
}
