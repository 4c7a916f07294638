//! Domain types shared across the harness.
//!
//! Everything here is plain data plus validation; construction goes through
//! checked constructors so an existing value always satisfies its invariants.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to every standard deviation used for normalisation.
pub const STD_EPSILON: f64 = 1e-6;

/// A labelled recording. The label is clip-level (weak); there is exactly one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioClip {
    pub clip_id: String,
    pub dataset_id: String,
    pub class_label: String,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub source_path: String,
}

impl AudioClip {
    pub fn new(
        clip_id: impl Into<String>,
        dataset_id: impl Into<String>,
        class_label: impl Into<String>,
        duration_s: f64,
        sample_rate: u32,
        source_path: impl Into<String>,
    ) -> Result<Self> {
        let clip = AudioClip {
            clip_id: clip_id.into(),
            dataset_id: dataset_id.into(),
            class_label: class_label.into(),
            duration_s,
            sample_rate,
            source_path: source_path.into(),
        };
        clip.validate()?;
        Ok(clip)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clip_id.is_empty() {
            return Err(Error::invalid("clip_id is empty"));
        }
        if self.class_label.is_empty() {
            return Err(Error::invalid(format!("clip `{}` has no class", self.clip_id)));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::invalid(format!(
                "clip `{}` has non-positive duration {}",
                self.clip_id, self.duration_s
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::invalid(format!("clip `{}` has zero sample rate", self.clip_id)));
        }
        Ok(())
    }
}

/// One fixed-length segment of a parent clip. Inherits the parent label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubClip {
    pub parent_clip_id: String,
    pub index: usize,
    pub length_s: f64,
    pub class_label: String,
    /// Cache locator, empty until the spectrogram has been materialised.
    pub spectrogram_ref: String,
}

impl SubClip {
    pub fn id(&self) -> String {
        subclip_id(&self.parent_clip_id, self.index)
    }
}

pub fn subclip_id(parent: &str, index: usize) -> String {
    format!("{parent}#{index}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_queries: usize,
}

impl EpisodeSpec {
    pub fn new(n_way: usize, k_shot: usize, q_queries: usize) -> Result<Self> {
        let spec = EpisodeSpec {
            n_way,
            k_shot,
            q_queries,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 {
            return Err(Error::invalid(format!("n_way must be >= 2, got {}", self.n_way)));
        }
        if self.k_shot < 1 || self.q_queries < 1 {
            return Err(Error::invalid("k_shot and q_queries must be >= 1"));
        }
        Ok(())
    }

    pub fn support_len(&self) -> usize {
        self.n_way * self.k_shot
    }

    pub fn query_len(&self) -> usize {
        self.n_way * self.q_queries
    }
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        EpisodeSpec {
            n_way: 5,
            k_shot: 1,
            q_queries: 5,
        }
    }
}

/// Log-mel spectrogram, laid out as (mel bins, time frames).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrogram(pub Array2<f32>);

impl Spectrogram {
    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn n_mels(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.0.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeItem {
    pub spectrogram: Arc<Spectrogram>,
    /// Episode-local class index in `0..n_way`.
    pub class_index: usize,
    pub dataset_id: String,
    pub parent_clip_id: String,
    pub subclip_index: usize,
}

/// One N-way k-shot task. Labels are episode-local; `class_map` maps back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    spec: EpisodeSpec,
    support: Vec<EpisodeItem>,
    query: Vec<EpisodeItem>,
    class_map: Vec<String>,
    source_datasets: BTreeSet<String>,
}

impl Episode {
    pub fn new(
        spec: EpisodeSpec,
        support: Vec<EpisodeItem>,
        query: Vec<EpisodeItem>,
        class_map: Vec<String>,
    ) -> Result<Self> {
        spec.validate()?;
        if class_map.len() != spec.n_way {
            return Err(Error::BadEpisode(format!(
                "class map has {} entries for {}-way",
                class_map.len(),
                spec.n_way
            )));
        }
        check_counts("support", &support, spec.n_way, spec.k_shot)?;
        check_counts("query", &query, spec.n_way, spec.q_queries)?;

        let support_parents: HashSet<(&str, &str)> = support
            .iter()
            .map(|it| (it.dataset_id.as_str(), it.parent_clip_id.as_str()))
            .collect();
        if let Some(leak) = query
            .iter()
            .find(|it| support_parents.contains(&(it.dataset_id.as_str(), it.parent_clip_id.as_str())))
        {
            return Err(Error::BadEpisode(format!(
                "clip `{}` appears in both support and query",
                leak.parent_clip_id
            )));
        }

        let shape = support[0].spectrogram.shape();
        if support
            .iter()
            .chain(query.iter())
            .any(|it| it.spectrogram.shape() != shape)
        {
            return Err(Error::BadEpisode("spectrogram shapes differ".into()));
        }

        let source_datasets = support
            .iter()
            .chain(query.iter())
            .map(|it| it.dataset_id.clone())
            .collect();
        Ok(Episode {
            spec,
            support,
            query,
            class_map,
            source_datasets,
        })
    }

    pub fn spec(&self) -> EpisodeSpec {
        self.spec
    }

    pub fn support(&self) -> &[EpisodeItem] {
        &self.support
    }

    pub fn query(&self) -> &[EpisodeItem] {
        &self.query
    }

    pub fn class_map(&self) -> &[String] {
        &self.class_map
    }

    pub fn source_datasets(&self) -> &BTreeSet<String> {
        &self.source_datasets
    }

    pub fn support_labels(&self) -> Vec<usize> {
        self.support.iter().map(|it| it.class_index).collect()
    }

    pub fn query_labels(&self) -> Vec<usize> {
        self.query.iter().map(|it| it.class_index).collect()
    }

    pub fn input_shape(&self) -> (usize, usize) {
        self.support[0].spectrogram.shape()
    }

    /// Relabels the episode-local classes: old index `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Episode> {
        let n = self.spec.n_way;
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid("not a permutation of the episode classes"));
        }
        let relabel = |items: &[EpisodeItem]| -> Vec<EpisodeItem> {
            items
                .iter()
                .map(|it| EpisodeItem {
                    class_index: perm[it.class_index],
                    ..it.clone()
                })
                .collect()
        };
        let mut class_map = vec![String::new(); n];
        for (old, label) in self.class_map.iter().enumerate() {
            class_map[perm[old]] = label.clone();
        }
        Episode::new(self.spec, relabel(&self.support), relabel(&self.query), class_map)
    }
}

fn check_counts(what: &str, items: &[EpisodeItem], n_way: usize, per_class: usize) -> Result<()> {
    if items.len() != n_way * per_class {
        return Err(Error::BadEpisode(format!(
            "{what} has {} items, expected {}",
            items.len(),
            n_way * per_class
        )));
    }
    let mut counts = vec![0usize; n_way];
    for it in items {
        if it.class_index >= n_way {
            return Err(Error::BadEpisode(format!(
                "{what} class index {} out of range",
                it.class_index
            )));
        }
        counts[it.class_index] += 1;
    }
    if let Some((c, &got)) = counts.iter().enumerate().find(|(_, &c)| c != per_class) {
        return Err(Error::BadEpisode(format!(
            "{what} class {c} has {got} items, expected {per_class}"
        )));
    }
    Ok(())
}

/// Class-disjoint train/val/test partition of one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub dataset_id: String,
    pub seed: u64,
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl ClassSplit {
    pub fn new(
        dataset_id: impl Into<String>,
        seed: u64,
        train: BTreeSet<String>,
        val: BTreeSet<String>,
        test: BTreeSet<String>,
    ) -> Result<Self> {
        let split = ClassSplit {
            dataset_id: dataset_id.into(),
            seed,
            train,
            val,
            test,
        };
        split.check_disjoint()?;
        Ok(split)
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let pairs = [
            ("train", &self.train, "val", &self.val),
            ("train", &self.train, "test", &self.test),
            ("val", &self.val, "test", &self.test),
        ];
        for (an, a, bn, b) in pairs {
            if let Some(c) = a.intersection(b).next() {
                return Err(Error::BadSplit(format!("class `{c}` is in both {an} and {bn}")));
            }
        }
        Ok(())
    }

    pub fn partition(&self, which: Partition) -> BTreeSet<String> {
        match which {
            Partition::Train => self.train.clone(),
            Partition::Val => self.val.clone(),
            Partition::Test => self.test.clone(),
            Partition::All => self.all_classes(),
        }
    }

    pub fn all_classes(&self) -> BTreeSet<String> {
        self.train.iter().chain(&self.val).chain(&self.test).cloned().collect()
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Val,
    Test,
    /// Every class; used for held-out datasets that are only ever tested on.
    All,
}

impl std::str::FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "val" => Ok(Partition::Val),
            "test" => Ok(Partition::Test),
            "all" => Ok(Partition::All),
            other => Err(Error::invalid(format!("unknown partition `{other}`"))),
        }
    }
}

impl std::fmt::Display for Partition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
            Partition::All => "all",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    PerSample,
    ChannelWise,
    Global,
}

impl std::str::FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_sample" => Ok(NormMode::PerSample),
            "channel_wise" => Ok(NormMode::ChannelWise),
            "global" => Ok(NormMode::Global),
            other => Err(Error::invalid(format!("unknown normalisation mode `{other}`"))),
        }
    }
}

/// Normalisation statistics. Global mode holds one mean/std, channel-wise one
/// per mel bin, per-sample none (each example supplies its own at apply time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mode: NormMode,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    pub fn new(mode: NormMode, mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        let expected_scalar = matches!(mode, NormMode::Global);
        if mean.len() != std.len()
            || (expected_scalar && mean.len() != 1)
            || (mode == NormMode::PerSample && !mean.is_empty())
        {
            return Err(Error::invalid(format!("statistics shape does not fit mode {mode:?}")));
        }
        Ok(NormalizationStats {
            mode,
            mean,
            std: std.into_iter().map(|s| s.max(STD_EPSILON)).collect(),
        })
    }

    pub fn per_sample() -> Self {
        NormalizationStats {
            mode: NormMode::PerSample,
            mean: Vec::new(),
            std: Vec::new(),
        }
    }
}

/// Counts clips per class label.
pub fn class_counts<'a>(labels: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for l in labels {
        *counts.entry(l.to_string()).or_insert(0) += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn item(class: usize, parent: &str) -> EpisodeItem {
        EpisodeItem {
            spectrogram: Arc::new(Spectrogram(Array2::zeros((2, 3)))),
            class_index: class,
            dataset_id: "d".into(),
            parent_clip_id: parent.into(),
            subclip_index: 0,
        }
    }

    fn two_way() -> (Vec<EpisodeItem>, Vec<EpisodeItem>) {
        let support = vec![item(0, "a0"), item(1, "b0")];
        let query = vec![item(0, "a1"), item(0, "a2"), item(1, "b1"), item(1, "b2")];
        (support, query)
    }

    #[test]
    fn episode_accepts_exact_counts() {
        let (s, q) = two_way();
        let ep = Episode::new(EpisodeSpec::new(2, 1, 2).unwrap(), s, q, vec!["A".into(), "B".into()]).unwrap();
        assert_eq!(ep.source_datasets().len(), 1);
        assert_eq!(ep.query_labels(), vec![0, 0, 1, 1]);
    }

    #[test]
    fn episode_rejects_wrong_per_class_counts() {
        let (s, mut q) = two_way();
        q[1].class_index = 1;
        q[1].parent_clip_id = "b9".into();
        let err = Episode::new(EpisodeSpec::new(2, 1, 2).unwrap(), s, q, vec!["A".into(), "B".into()]).unwrap_err();
        assert!(err.to_string().contains("query class 0"), "{err}");
    }

    #[test]
    fn episode_rejects_leakage() {
        let (s, mut q) = two_way();
        q[0].parent_clip_id = "a0".into();
        let err = Episode::new(EpisodeSpec::new(2, 1, 2).unwrap(), s, q, vec!["A".into(), "B".into()]).unwrap_err();
        assert!(err.to_string().contains("both support and query"));
    }

    #[test]
    fn episode_rejects_mixed_shapes() {
        let (s, mut q) = two_way();
        q[3].spectrogram = Arc::new(Spectrogram(Array2::zeros((2, 4))));
        assert!(Episode::new(EpisodeSpec::new(2, 1, 2).unwrap(), s, q, vec!["A".into(), "B".into()]).is_err());
    }

    #[test]
    fn permutation_relabels_consistently() {
        let (s, q) = two_way();
        let ep = Episode::new(EpisodeSpec::new(2, 1, 2).unwrap(), s, q, vec!["A".into(), "B".into()]).unwrap();
        let p = ep.permuted(&[1, 0]).unwrap();
        assert_eq!(p.class_map(), &["B".to_string(), "A".to_string()]);
        assert_eq!(p.query_labels(), vec![1, 1, 0, 0]);
        assert!(ep.permuted(&[0, 0]).is_err());
    }

    #[test]
    fn episode_serde_round_trip() {
        let (s, q) = two_way();
        let ep = Episode::new(EpisodeSpec::new(2, 1, 2).unwrap(), s, q, vec!["A".into(), "B".into()]).unwrap();
        let back: Episode = serde_json::from_str(&serde_json::to_string(&ep).unwrap()).unwrap();
        assert_eq!(back, ep);
    }

    #[test]
    fn spec_and_clip_validation() {
        assert!(EpisodeSpec::new(1, 1, 1).is_err());
        assert!(EpisodeSpec::new(5, 0, 1).is_err());
        assert!(AudioClip::new("c", "d", "x", 0.0, 16000, "p").is_err());
        assert!(AudioClip::new("c", "d", "x", 1.0, 0, "p").is_err());
        assert!(AudioClip::new("c", "d", "", 1.0, 16000, "p").is_err());
    }

    #[test]
    fn stats_floor_std() {
        let s = NormalizationStats::new(NormMode::Global, vec![0.0], vec![0.0]).unwrap();
        assert_eq!(s.std, vec![STD_EPSILON]);
        assert!(NormalizationStats::new(NormMode::Global, vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn split_rejects_overlap() {
        let set = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        assert!(ClassSplit::new("d", 0, set(&["a", "b"]), set(&["c"]), set(&["b"])).is_err());
        assert!(ClassSplit::new("d", 0, set(&["a"]), set(&["c"]), set(&["b"])).is_ok());
    }

    proptest::proptest! {
        #[test]
        fn clip_serde_identity(id in "[a-z0-9]{1,8}", label in "[a-z]{1,6}", dur in 0.01f64..600.0, sr in 1u32..96_000) {
            let clip = AudioClip::new(id, "ds", label, dur, sr, "x.wav").unwrap();
            let back: AudioClip = serde_json::from_str(&serde_json::to_string(&clip).unwrap()).unwrap();
            proptest::prop_assert_eq!(back, clip);
        }
    }
}
