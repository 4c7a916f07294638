//! N-way k-shot episode sampling over one or several class pools.
//!
//! Sampling is two-staged. A cheap [`EpisodePlan`] picks classes, parent
//! clips and sub-clip indices; [`EpisodePlan::materialize`] then fetches the
//! spectrograms. The sampling unit is the parent clip, so the same recording
//! never lands in both support and query.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::sample_distinct;
use crate::store::SpectrogramStore;
use crate::types::{Episode, EpisodeItem, EpisodeSpec, Partition, Spectrogram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    Single,
    JointWithin,
    JointFree,
}

impl std::str::FromStr for SamplerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(SamplerMode::Single),
            "joint_within" => Ok(SamplerMode::JointWithin),
            "joint_free" => Ok(SamplerMode::JointFree),
            other => Err(Error::invalid(format!("unknown sampler mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubclipPolicy {
    #[default]
    RandomSubclip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub spec: EpisodeSpec,
    pub mode: SamplerMode,
    pub datasets: Vec<(String, Partition)>,
    pub seed: u64,
    #[serde(default)]
    pub subclip_policy: SubclipPolicy,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.datasets.is_empty() {
            return Err(Error::invalid("sampler needs at least one dataset"));
        }
        if self.mode != SamplerMode::Single && self.datasets.len() < 2 {
            return Err(Error::invalid("joint sampling needs at least two datasets"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolClip {
    pub clip_id: String,
    pub n_subclips: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolClass {
    pub label: String,
    pub clips: Vec<PoolClip>,
}

/// The classes of one dataset partition, each with its parent clips.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassPool {
    pub dataset_id: String,
    pub classes: Vec<PoolClass>,
}

impl ClassPool {
    /// Classes from `classes` that have at least one cached clip, sorted by label.
    pub fn from_store(store: &SpectrogramStore, dataset_id: &str, classes: &BTreeSet<String>) -> Self {
        let index = store.class_index(dataset_id);
        let classes = index
            .into_iter()
            .filter(|(label, _)| classes.contains(label))
            .map(|(label, clips)| PoolClass {
                label,
                clips: clips
                    .into_iter()
                    .map(|(clip_id, n_subclips)| PoolClip { clip_id, n_subclips })
                    .collect(),
            })
            .collect();
        ClassPool {
            dataset_id: dataset_id.to_string(),
            classes,
        }
    }

    /// Builds a pool from `(label, clip count, sub-clips per clip)` triples.
    /// Clip ids are `<label>/<i>`.
    pub fn from_counts(dataset_id: &str, counts: &[(&str, usize, usize)]) -> Self {
        let mut classes: Vec<PoolClass> = counts
            .iter()
            .map(|&(label, n, subs)| PoolClass {
                label: label.to_string(),
                clips: (0..n)
                    .map(|i| PoolClip {
                        clip_id: format!("{label}/{i}"),
                        n_subclips: subs,
                    })
                    .collect(),
            })
            .collect();
        classes.sort_by(|a, b| a.label.cmp(&b.label));
        ClassPool {
            dataset_id: dataset_id.to_string(),
            classes,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Clips per class label.
    pub fn class_counts(&self) -> BTreeMap<String, usize> {
        self.classes.iter().map(|c| (c.label.clone(), c.clips.len())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedItem {
    pub dataset_id: String,
    pub clip_id: String,
    pub subclip_index: usize,
    pub class_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodePlan {
    pub spec: EpisodeSpec,
    pub class_map: Vec<String>,
    pub class_datasets: Vec<String>,
    pub support: Vec<PlannedItem>,
    pub query: Vec<PlannedItem>,
}

impl EpisodePlan {
    pub fn source_datasets(&self) -> BTreeSet<&str> {
        self.class_datasets.iter().map(String::as_str).collect()
    }

    pub fn materialize(&self, store: &SpectrogramStore) -> Result<Episode> {
        let fetch = |items: &[PlannedItem]| -> Result<Vec<EpisodeItem>> {
            items
                .iter()
                .map(|p| {
                    Ok(EpisodeItem {
                        spectrogram: store.subclip(&p.dataset_id, &p.clip_id, p.subclip_index)?,
                        class_index: p.class_index,
                        dataset_id: p.dataset_id.clone(),
                        parent_clip_id: p.clip_id.clone(),
                        subclip_index: p.subclip_index,
                    })
                })
                .collect()
        };
        Episode::new(
            self.spec,
            fetch(&self.support)?,
            fetch(&self.query)?,
            self.class_map.clone(),
        )
    }
}

/// Uniform sub-clip choice for a parent clip.
pub fn choose_subclip<R: Rng + ?Sized>(n_subclips: usize, policy: SubclipPolicy, rng: &mut R) -> usize {
    match policy {
        SubclipPolicy::RandomSubclip => {
            if n_subclips <= 1 {
                0
            } else {
                rng.gen_range(0..n_subclips)
            }
        }
    }
}

/// Picks one cached sub-clip of a parent clip under `policy`.
pub fn resolve_clip<R: Rng + ?Sized>(
    store: &SpectrogramStore,
    dataset_id: &str,
    clip_id: &str,
    policy: SubclipPolicy,
    rng: &mut R,
) -> Result<Arc<Spectrogram>> {
    let rec = store.clip(dataset_id, clip_id)?;
    let i = choose_subclip(rec.subclips.len(), policy, rng);
    Ok(rec.subclips[i].clone())
}

fn plan_classes<R: Rng + ?Sized>(
    picked: &[(&ClassPool, &PoolClass)],
    spec: EpisodeSpec,
    rng: &mut R,
) -> Result<EpisodePlan> {
    let (k, q) = (spec.k_shot, spec.q_queries);
    let mut support = Vec::with_capacity(spec.support_len());
    let mut query = Vec::with_capacity(spec.query_len());
    for (class_index, (pool, class)) in picked.iter().enumerate() {
        let m = class.clips.len();
        let (s_idx, q_idx): (Vec<usize>, Vec<usize>) = if m >= k + q {
            let mut d = sample_distinct(m, k + q, rng);
            let qs = d.split_off(k);
            (d, qs)
        } else if m > k {
            // reserve k distinct support clips, then queries with replacement
            // from the remainder so nothing crosses the support/query line
            let s = sample_distinct(m, k, rng);
            let rest: Vec<usize> = (0..m).filter(|i| !s.contains(i)).collect();
            let qs = (0..q).map(|_| rest[rng.gen_range(0..rest.len())]).collect();
            (s, qs)
        } else {
            return Err(Error::TooFewClips {
                class: class.label.clone(),
                available: m,
                needed: k + 1,
            });
        };
        let mut item = |ci: usize| {
            let clip = &class.clips[ci];
            PlannedItem {
                dataset_id: pool.dataset_id.clone(),
                clip_id: clip.clip_id.clone(),
                subclip_index: choose_subclip(clip.n_subclips, SubclipPolicy::RandomSubclip, rng),
                class_index,
            }
        };
        let s_items: Vec<_> = s_idx.into_iter().map(&mut item).collect();
        let q_items: Vec<_> = q_idx.into_iter().map(&mut item).collect();
        support.extend(s_items);
        query.extend(q_items);
    }
    Ok(EpisodePlan {
        spec,
        class_map: picked.iter().map(|(_, c)| c.label.clone()).collect(),
        class_datasets: picked.iter().map(|(p, _)| p.dataset_id.clone()).collect(),
        support,
        query,
    })
}

/// Classes uniformly without replacement, clips uniformly within class.
pub fn plan_single<R: Rng + ?Sized>(pool: &ClassPool, spec: EpisodeSpec, rng: &mut R) -> Result<EpisodePlan> {
    spec.validate()?;
    if pool.n_classes() < spec.n_way {
        return Err(Error::TooFewClasses {
            needed: spec.n_way,
            found: pool.n_classes(),
        });
    }
    let picked: Vec<_> = sample_distinct(pool.n_classes(), spec.n_way, rng)
        .into_iter()
        .map(|i| (pool, &pool.classes[i]))
        .collect();
    plan_classes(&picked, spec, rng)
}

/// Chooses one eligible dataset uniformly, then samples within it.
pub fn plan_joint_within<R: Rng + ?Sized>(pools: &[ClassPool], spec: EpisodeSpec, rng: &mut R) -> Result<EpisodePlan> {
    let eligible: Vec<&ClassPool> = pools.iter().filter(|p| p.n_classes() >= spec.n_way).collect();
    if eligible.is_empty() {
        return Err(Error::TooFewClasses {
            needed: spec.n_way,
            found: pools.iter().map(ClassPool::n_classes).max().unwrap_or(0),
        });
    }
    let chosen = eligible[rng.gen_range(0..eligible.len())];
    plan_single(chosen, spec, rng)
}

/// Draws N classes uniformly from the union of all pools.
pub fn plan_joint_free<R: Rng + ?Sized>(pools: &[ClassPool], spec: EpisodeSpec, rng: &mut R) -> Result<EpisodePlan> {
    spec.validate()?;
    let universe: Vec<(&ClassPool, &PoolClass)> = pools
        .iter()
        .flat_map(|p| p.classes.iter().map(move |c| (p, c)))
        .collect();
    if universe.len() < spec.n_way {
        return Err(Error::TooFewClasses {
            needed: spec.n_way,
            found: universe.len(),
        });
    }
    let picked: Vec<_> = sample_distinct(universe.len(), spec.n_way, rng)
        .into_iter()
        .map(|i| universe[i])
        .collect();
    plan_classes(&picked, spec, rng)
}

pub fn sample_episode_single<R: Rng + ?Sized>(
    pool: &ClassPool,
    store: &SpectrogramStore,
    spec: EpisodeSpec,
    rng: &mut R,
) -> Result<Episode> {
    plan_single(pool, spec, rng)?.materialize(store)
}

pub fn sample_episode_joint_within<R: Rng + ?Sized>(
    pools: &[ClassPool],
    store: &SpectrogramStore,
    spec: EpisodeSpec,
    rng: &mut R,
) -> Result<Episode> {
    plan_joint_within(pools, spec, rng)?.materialize(store)
}

pub fn sample_episode_joint_free<R: Rng + ?Sized>(
    pools: &[ClassPool],
    store: &SpectrogramStore,
    spec: EpisodeSpec,
    rng: &mut R,
) -> Result<Episode> {
    plan_joint_free(pools, spec, rng)?.materialize(store)
}

/// A configured sampler over one or more pools.
#[derive(Debug, Clone)]
pub struct EpisodeSampler {
    mode: SamplerMode,
    spec: EpisodeSpec,
    pools: Vec<ClassPool>,
}

impl EpisodeSampler {
    pub fn new(mode: SamplerMode, spec: EpisodeSpec, pools: Vec<ClassPool>) -> Result<Self> {
        spec.validate()?;
        match (mode, pools.len()) {
            (_, 0) => return Err(Error::invalid("sampler needs at least one pool")),
            (SamplerMode::Single, n) if n > 1 => {
                return Err(Error::invalid("single-dataset sampling takes exactly one pool"))
            }
            (SamplerMode::JointWithin | SamplerMode::JointFree, 1) => {
                return Err(Error::invalid("joint sampling needs at least two datasets"))
            }
            _ => {}
        }
        let sampler = EpisodeSampler { mode, spec, pools };
        // surface an impossible configuration before any sampling happens
        let feasible = match mode {
            SamplerMode::Single => sampler.pools[0].n_classes() >= spec.n_way,
            SamplerMode::JointWithin => sampler.pools.iter().any(|p| p.n_classes() >= spec.n_way),
            SamplerMode::JointFree => sampler.pools.iter().map(ClassPool::n_classes).sum::<usize>() >= spec.n_way,
        };
        if !feasible {
            return Err(Error::TooFewClasses {
                needed: spec.n_way,
                found: sampler.pools.iter().map(ClassPool::n_classes).sum(),
            });
        }
        Ok(sampler)
    }

    pub fn spec(&self) -> EpisodeSpec {
        self.spec
    }

    pub fn mode(&self) -> SamplerMode {
        self.mode
    }

    pub fn pools(&self) -> &[ClassPool] {
        &self.pools
    }

    /// Same pools, different episode shape.
    pub fn with_spec(&self, spec: EpisodeSpec) -> Result<Self> {
        EpisodeSampler::new(self.mode, spec, self.pools.clone())
    }

    pub fn plan<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<EpisodePlan> {
        match self.mode {
            SamplerMode::Single => plan_single(&self.pools[0], self.spec, rng),
            SamplerMode::JointWithin => plan_joint_within(&self.pools, self.spec, rng),
            SamplerMode::JointFree => plan_joint_free(&self.pools, self.spec, rng),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, store: &SpectrogramStore, rng: &mut R) -> Result<Episode> {
        self.plan(rng)?.materialize(store)
    }
}
