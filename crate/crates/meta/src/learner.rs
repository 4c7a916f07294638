//! Learner state, the prediction interface and the shared encoder plumbing.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use fsaudio_core::rng::TaskRng;
use fsaudio_core::{Episode, EpisodeItem, Spectrogram};
use fsaudio_nn::{BnMode, Crnn, CrnnConfig, Encoder, Params};
use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maml::{adapt, InnerLoop, MetaCurvature};
use crate::metric::{cosine, ncc_predict, neg_sq_euclidean, prototypes, FeatureNorm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Protonet,
    FoMaml,
    FoMetaCurvature,
    Simpleshot,
    MetaBaseline,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::FoMaml,
        Algorithm::FoMetaCurvature,
        Algorithm::Protonet,
        Algorithm::Simpleshot,
        Algorithm::MetaBaseline,
    ];

    /// Gradient-based learners adapt an N-way head per task.
    pub fn is_gbml(self) -> bool {
        matches!(self, Algorithm::FoMaml | Algorithm::FoMetaCurvature)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Protonet => "protonet",
            Algorithm::FoMaml => "fo_maml",
            Algorithm::FoMetaCurvature => "fo_meta_curvature",
            Algorithm::Simpleshot => "simpleshot",
            Algorithm::MetaBaseline => "meta_baseline",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown algorithm `{s}`")))
    }
}

/// Algorithm together with the extra state it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum LearnerKind {
    Protonet,
    FoMaml {
        inner: InnerLoop,
    },
    FoMetaCurvature {
        inner: InnerLoop,
        transforms: MetaCurvature,
        /// Recorded in results metadata.
        variant: String,
    },
    Simpleshot {
        norm: FeatureNorm,
        train_mean: Vec<f64>,
    },
    MetaBaseline {
        logit_scale: f64,
        /// Early-stopping rule used during fine-tuning.
        stopping_rule: String,
    },
}

impl LearnerKind {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            LearnerKind::Protonet => Algorithm::Protonet,
            LearnerKind::FoMaml { .. } => Algorithm::FoMaml,
            LearnerKind::FoMetaCurvature { .. } => Algorithm::FoMetaCurvature,
            LearnerKind::Simpleshot { .. } => Algorithm::Simpleshot,
            LearnerKind::MetaBaseline { .. } => Algorithm::MetaBaseline,
        }
    }
}

/// An encoder architecture with one set of parameters and running buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<E> {
    pub encoder: E,
    pub params: Params,
    pub buffers: Params,
}

impl<E: Encoder> Model<E> {
    pub fn init(encoder: E, seed: u64) -> Self {
        let params = encoder.init_params(seed);
        let buffers = encoder.init_buffers();
        Model {
            encoder,
            params,
            buffers,
        }
    }

    pub fn forward(&self, params: &Params, x: &Array3<f64>, mode: BnMode) -> Result<(Array2<f64>, E::Cache)> {
        Ok(self.encoder.forward(params, &self.buffers, x, mode)?)
    }

    /// Inference-mode features for one input at a time, so a row never
    /// depends on what else is in the batch.
    pub fn embed_one(&self, spec: &Spectrogram) -> Result<Array1<f64>> {
        let x = to_input(std::slice::from_ref(&spec))?;
        let (y, _) = self.forward(&self.params, &x, BnMode::Running)?;
        Ok(y.index_axis_move(Axis(0), 0))
    }
}

/// Stacks spectrograms into an `[n, mels, frames]` f64 batch.
pub fn to_input(specs: &[&Spectrogram]) -> Result<Array3<f64>> {
    let first = specs.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let (m, t) = first.shape();
    let mut x = Array3::<f64>::zeros((specs.len(), m, t));
    for (mut slot, s) in x.axis_iter_mut(Axis(0)).zip(specs) {
        if s.shape() != (m, t) {
            return Err(Error::invalid("spectrograms in a batch differ in shape"));
        }
        slot.zip_mut_with(&s.0, |d, &v| *d = v as f64);
    }
    Ok(x)
}

pub fn items_input(items: &[EpisodeItem]) -> Result<Array3<f64>> {
    let specs: Vec<&Spectrogram> = items.iter().map(|i| i.spectrogram.as_ref()).collect();
    to_input(&specs)
}

/// Support followed by query, as one batch, with episode-local labels.
pub fn episode_input(episode: &Episode) -> Result<(Array3<f64>, Vec<usize>, Vec<usize>)> {
    let items: Vec<EpisodeItem> = episode.support().iter().chain(episode.query()).cloned().collect();
    Ok((items_input(&items)?, episode.support_labels(), episode.query_labels()))
}

type ItemKey = (String, String, usize);

/// Memoised inference features keyed by (dataset, clip, sub-clip).
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    map: Mutex<HashMap<ItemKey, Arc<Array1<f64>>>>,
}

impl EmbeddingCache {
    pub fn len(&self) -> usize {
        self.map.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Anything that labels the queries of an episode.
pub trait EpisodeClassifier: Sync {
    fn name(&self) -> String;

    /// The way count fixed by the output layer, if any.
    fn fixed_way(&self) -> Option<usize> {
        None
    }

    /// Episode-local predictions, one per query item.
    fn predict(&self, episode: &Episode, rng: &mut TaskRng) -> Result<Vec<usize>>;
}

pub struct Learner<E> {
    pub model: Model<E>,
    pub kind: LearnerKind,
    cache: Option<EmbeddingCache>,
}

impl<E: Encoder + Clone> Clone for Learner<E> {
    fn clone(&self) -> Self {
        Learner {
            model: self.model.clone(),
            kind: self.kind.clone(),
            cache: None,
        }
    }
}

impl<E: Encoder> Learner<E> {
    pub fn new(model: Model<E>, kind: LearnerKind) -> Self {
        Learner {
            model,
            kind,
            cache: None,
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        self.kind.algorithm()
    }

    /// Turns on feature memoisation for frozen-feature learners. Any later
    /// parameter change must be followed by [`Learner::clear_cache`].
    pub fn with_cache(mut self) -> Self {
        self.cache = Some(EmbeddingCache::default());
        self
    }

    pub fn clear_cache(&mut self) {
        if self.cache.is_some() {
            self.cache = Some(EmbeddingCache::default());
        }
    }

    pub fn cache(&self) -> Option<&EmbeddingCache> {
        self.cache.as_ref()
    }

    /// Inference features for episode items, one forward pass per item.
    pub fn embed_items(&self, items: &[EpisodeItem]) -> Result<Array2<f64>> {
        let rows: Vec<Arc<Array1<f64>>> = items
            .iter()
            .map(|item| {
                let Some(cache) = &self.cache else {
                    return Ok(Arc::new(self.model.embed_one(&item.spectrogram)?));
                };
                let key = (item.dataset_id.clone(), item.parent_clip_id.clone(), item.subclip_index);
                if let Some(v) = cache.map.lock().expect("cache lock").get(&key) {
                    return Ok(v.clone());
                }
                let v = Arc::new(self.model.embed_one(&item.spectrogram)?);
                cache.map.lock().expect("cache lock").insert(key, v.clone());
                Ok(v)
            })
            .collect::<Result<_>>()?;
        let dim = self.model.encoder.output_dim();
        let mut out = Array2::<f64>::zeros((rows.len(), dim));
        for (mut r, v) in out.axis_iter_mut(Axis(0)).zip(&rows) {
            r.assign(v);
        }
        Ok(out)
    }
}

impl<E: Encoder> EpisodeClassifier for Learner<E> {
    fn name(&self) -> String {
        self.algorithm().to_string()
    }

    fn fixed_way(&self) -> Option<usize> {
        self.algorithm().is_gbml().then(|| self.model.encoder.output_dim())
    }

    fn predict(&self, episode: &Episode, _rng: &mut TaskRng) -> Result<Vec<usize>> {
        let n = episode.spec().n_way;
        let s_labels = episode.support_labels();
        match &self.kind {
            LearnerKind::FoMaml { inner } => gbml_predict(&self.model, episode, *inner, None),
            LearnerKind::FoMetaCurvature { inner, transforms, .. } => {
                gbml_predict(&self.model, episode, *inner, Some(transforms))
            }
            LearnerKind::Protonet => {
                let s = self.embed_items(episode.support())?;
                let q = self.embed_items(episode.query())?;
                let c = prototypes(s.view(), &s_labels, n)?;
                Ok(fsaudio_nn::argmax_rows(neg_sq_euclidean(q.view(), c.view()).view()))
            }
            LearnerKind::Simpleshot { norm, train_mean } => {
                let s = self.embed_items(episode.support())?;
                let q = self.embed_items(episode.query())?;
                ncc_predict(s.view(), &s_labels, q.view(), n, *norm, Some(train_mean))
            }
            LearnerKind::MetaBaseline { logit_scale, .. } => {
                let s = self.embed_items(episode.support())?;
                let q = self.embed_items(episode.query())?;
                let c = prototypes(s.view(), &s_labels, n)?;
                Ok(fsaudio_nn::argmax_rows(
                    (cosine(q.view(), c.view()) * *logit_scale).view(),
                ))
            }
        }
    }
}

/// Adapts on the support set, then labels the queries with the adapted
/// parameters. Only the first `n_way` logits compete.
fn gbml_predict<E: Encoder>(
    model: &Model<E>,
    episode: &Episode,
    inner: InnerLoop,
    transforms: Option<&MetaCurvature>,
) -> Result<Vec<usize>> {
    let n = episode.spec().n_way;
    let width = model.encoder.output_dim();
    if n > width {
        return Err(Error::Unsupported(format!("{n}-way episode for a {width}-way head")));
    }
    let support = items_input(episode.support())?;
    let adapted = adapt(model, &support, &episode.support_labels(), inner, transforms)?;
    let (logits, _) = model.forward(&adapted.params, &items_input(episode.query())?, BnMode::Batch)?;
    Ok(fsaudio_nn::argmax_rows(logits.slice(ndarray::s![.., ..n])))
}

/// Uniformly random labels: the chance floor.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomLearner;

impl EpisodeClassifier for RandomLearner {
    fn name(&self) -> String {
        "random".into()
    }

    fn predict(&self, episode: &Episode, rng: &mut TaskRng) -> Result<Vec<usize>> {
        let n = episode.spec().n_way;
        Ok(episode.query().iter().map(|_| rng.gen_range(0..n)).collect())
    }
}

/// Serialisable learner: backbone config, parameters and algorithm extras.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerState {
    pub kind: LearnerKind,
    pub backbone: CrnnConfig,
    pub params: Params,
    pub buffers: Params,
    pub seed: u64,
    pub step: u64,
}

impl LearnerState {
    pub fn from_learner(learner: &Learner<Crnn>, seed: u64, step: u64) -> Self {
        LearnerState {
            kind: learner.kind.clone(),
            backbone: learner.model.encoder.config().clone(),
            params: learner.model.params.clone(),
            buffers: learner.model.buffers.clone(),
            seed,
            step,
        }
    }

    pub fn learner(&self) -> Result<Learner<Crnn>> {
        let encoder = Crnn::new(self.backbone.clone())?;
        let fresh = encoder.init_params(0);
        self.params.check_compatible(&fresh)?;
        self.buffers.check_compatible(&encoder.init_buffers())?;
        if let LearnerKind::FoMetaCurvature { transforms, .. } = &self.kind {
            transforms.check(&self.params)?;
        }
        Ok(Learner::new(
            Model {
                encoder,
                params: self.params.clone(),
                buffers: self.buffers.clone(),
            },
            self.kind.clone(),
        ))
    }

    pub fn algorithm(&self) -> Algorithm {
        self.kind.algorithm()
    }
}
