//! Training drivers for all five learners with best-on-validation selection.

use fsaudio_core::rng::task_rng;
use fsaudio_core::sampler::{ClassPool, EpisodeSampler, SamplerMode};
use fsaudio_core::store::SpectrogramStore;
use fsaudio_core::{Episode, EpisodeSpec};
use fsaudio_nn::{Adam, Crnn, CrnnConfig, Encoder, Head, Params};
use ndarray::{arr0, ArrayD};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conventional::{feature_mean, ConventionalConfig, ConventionalTrainer, LabelledSet};
use crate::episodic::{metric_episode_step, MetricHead};
use crate::error::{Error, Result};
use crate::eval::task_accuracies;
use crate::learner::{Algorithm, Learner, LearnerKind, Model};
use crate::maml::{fomaml_meta_step, metacurvature_meta_step, InnerLoop, MetaCurvature, MC_VARIANT};
use crate::metric::FeatureNorm;

/// Validation episodes come from this stream family so they never
/// coincide with training streams.
const VAL_STREAM_SALT: u64 = 0x5e_ed0f_7a11;

pub const METABASELINE_STOPPING_RULE: &str = "validation_accuracy_plateau";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    /// Upper bound on episodic meta-steps.
    pub steps: usize,
    pub meta_batch: usize,
    /// Outer Adam learning rate, held fixed.
    pub lr: f64,
    pub inner: InnerLoop,
    /// Whether Meta-Curvature transforms are meta-learned or stay at identity.
    pub learn_transforms: bool,
    pub conventional: ConventionalConfig,
    pub norm: FeatureNorm,
    pub logit_scale: f64,
    /// Validate every this many steps (epochs for SimpleShot).
    pub val_every: usize,
    pub val_tasks: usize,
    /// Validations without improvement before stopping; 0 never stops early.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algorithm: Algorithm::Protonet,
            steps: 2000,
            meta_batch: 4,
            lr: Adam::DEFAULT_LR,
            inner: InnerLoop::default(),
            learn_transforms: true,
            conventional: ConventionalConfig::default(),
            norm: FeatureNorm::Cl2n,
            logit_scale: 10.0,
            val_every: 100,
            val_tasks: 200,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    // negated comparisons so NaN fails every check
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.meta_batch == 0 || self.val_every == 0 {
            return Err(Error::invalid("meta_batch and val_every must be positive"));
        }
        if !(self.lr > 0.0) || !(self.inner.lr >= 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if !self.logit_scale.is_finite() {
            return Err(Error::invalid("logit scale must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub phase: String,
    pub step: usize,
    pub loss: f64,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
}

pub struct TrainData<'a> {
    pub store: &'a SpectrogramStore,
    pub train: &'a EpisodeSampler,
    pub val: Option<&'a EpisodeSampler>,
}

pub struct TrainOutcome<E> {
    pub learner: Learner<E>,
    pub log: Vec<TrainRecord>,
    pub best_step: usize,
    pub best_val_accuracy: Option<f64>,
    pub stopped_early: bool,
}

/// Backbone with the head each algorithm expects.
pub fn build_model(backbone: &CrnnConfig, algorithm: Algorithm, n_way: usize, seed: u64) -> Result<Model<Crnn>> {
    let head = if algorithm.is_gbml() {
        Head::NWay(n_way)
    } else {
        match backbone.head {
            Head::Embedding(d) => Head::Embedding(d),
            Head::NWay(_) => Head::Embedding(64),
        }
    };
    Ok(Model::init(Crnn::new(backbone.with_head(head))?, seed))
}

/// Validation sampler over the given pools; N shrinks to the number of
/// classes available when the pools are smaller than the training N.
pub fn validation_sampler(mode: SamplerMode, spec: EpisodeSpec, pools: Vec<ClassPool>) -> Result<EpisodeSampler> {
    let available = match mode {
        SamplerMode::Single => pools.first().map_or(0, ClassPool::n_classes),
        SamplerMode::JointWithin => pools.iter().map(ClassPool::n_classes).max().unwrap_or(0),
        SamplerMode::JointFree => pools.iter().map(ClassPool::n_classes).sum(),
    };
    let n = spec.n_way.min(available);
    Ok(EpisodeSampler::new(
        mode,
        EpisodeSpec::new(n, spec.k_shot, spec.q_queries)?,
        pools,
    )?)
}

/// Tracks the best validation score and the patience budget.
struct Selector<S> {
    best: Option<(f64, usize, S)>,
    misses: usize,
    patience: usize,
}

impl<S> Selector<S> {
    fn new(patience: usize) -> Self {
        Selector {
            best: None,
            misses: 0,
            patience,
        }
    }

    /// Returns true when training should stop.
    fn offer(&mut self, score: f64, step: usize, state: impl FnOnce() -> S) -> bool {
        if self.best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            self.best = Some((score, step, state()));
            self.misses = 0;
        } else {
            self.misses += 1;
        }
        self.patience > 0 && self.misses >= self.patience
    }
}

fn validate<E: Encoder + Clone>(learner: &Learner<E>, data: &TrainData, cfg: &TrainConfig) -> Result<Option<f64>> {
    let Some(val) = data.val else {
        return Ok(None);
    };
    let probe = learner.clone().with_cache();
    let accs = task_accuracies(
        &probe,
        data.store,
        val,
        cfg.val_tasks.max(1),
        cfg.seed ^ VAL_STREAM_SALT,
    )?;
    Ok(Some(fsaudio_core::stats::mean(&accs)))
}

fn sample_batch(data: &TrainData, cfg: &TrainConfig, step: usize) -> Result<Vec<Episode>> {
    (0..cfg.meta_batch)
        .map(|b| {
            let mut rng = task_rng(cfg.seed, (step * cfg.meta_batch + b) as u64);
            Ok(data.train.sample(data.store, &mut rng)?)
        })
        .collect()
}

#[derive(Clone)]
struct Snapshot {
    params: Params,
    buffers: Params,
    kind: LearnerKind,
}

/// Trains `model` with `cfg.algorithm`. The model's head must already
/// match the algorithm (see [`build_model`]).
pub fn train<E: Encoder + Clone>(model: Model<E>, data: &TrainData, cfg: &TrainConfig) -> Result<TrainOutcome<E>> {
    cfg.validate()?;
    let n_way = data.train.spec().n_way;
    if cfg.algorithm.is_gbml() && model.encoder.output_dim() < n_way {
        return Err(Error::invalid(format!(
            "{}-wide head cannot train {n_way}-way episodes",
            model.encoder.output_dim()
        )));
    }
    match cfg.algorithm {
        Algorithm::Simpleshot => train_simpleshot(model, data, cfg),
        Algorithm::MetaBaseline => {
            let set = LabelledSet::from_pools(data.store, data.train.pools())?;
            let mut trainer = ConventionalTrainer::new(model, &set, cfg.conventional, cfg.seed)?;
            let mut log = Vec::new();
            for _ in 0..cfg.conventional.epochs {
                let r = trainer.run_epoch(&set)?;
                log.push(TrainRecord {
                    phase: "conventional".into(),
                    step: r.epoch,
                    loss: r.loss,
                    accuracy: r.accuracy,
                    val_accuracy: None,
                });
            }
            let kind = LearnerKind::MetaBaseline {
                logit_scale: cfg.logit_scale,
                stopping_rule: METABASELINE_STOPPING_RULE.into(),
            };
            let mut out = episodic(trainer.model, kind, data, cfg)?;
            log.append(&mut out.log);
            out.log = log;
            Ok(out)
        }
        Algorithm::Protonet => episodic(model, LearnerKind::Protonet, data, cfg),
        Algorithm::FoMaml => episodic(model, LearnerKind::FoMaml { inner: cfg.inner }, data, cfg),
        Algorithm::FoMetaCurvature => {
            let transforms = MetaCurvature::identity(&model.params);
            let kind = LearnerKind::FoMetaCurvature {
                inner: cfg.inner,
                transforms,
                variant: MC_VARIANT.into(),
            };
            episodic(model, kind, data, cfg)
        }
    }
}

fn scale_param(s: f64) -> Params {
    Params(vec![arr0(s).into_dyn()])
}

fn scalar(p: &ArrayD<f64>) -> f64 {
    *p.iter().next().expect("scalar tensor")
}

/// Episodic loop shared by ProtoNet, the GBML learners and Meta-Baseline fine-tuning.
fn episodic<E: Encoder + Clone>(
    model: Model<E>,
    mut kind: LearnerKind,
    data: &TrainData,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<E>> {
    let mut learner = Learner::new(model, kind.clone());
    let mut opt = Adam::new(cfg.lr, &learner.model.params);
    // Meta-Baseline scale and Meta-Curvature transforms get their own optimiser.
    let mut extra_opt = match &kind {
        LearnerKind::MetaBaseline { logit_scale, .. } => Some(Adam::new(cfg.lr, &scale_param(*logit_scale))),
        LearnerKind::FoMetaCurvature { transforms, .. } if cfg.learn_transforms => {
            Some(Adam::new(cfg.lr, &transforms.as_params()))
        }
        _ => None,
    };
    let mut selector: Selector<Snapshot> = Selector::new(cfg.patience);
    let mut log = Vec::new();
    let mut stopped_early = false;
    let snapshot = |l: &Learner<E>| Snapshot {
        params: l.model.params.clone(),
        buffers: l.model.buffers.clone(),
        kind: l.kind.clone(),
    };

    for step in 0..cfg.steps {
        let episodes = sample_batch(data, cfg, step)?;
        let (loss, accuracy) = match &mut kind {
            LearnerKind::FoMaml { inner } => {
                let s = fomaml_meta_step(&mut learner.model, &episodes, *inner, &mut opt)?;
                (s.loss, s.accuracy)
            }
            LearnerKind::FoMetaCurvature { inner, transforms, .. } => {
                let s = metacurvature_meta_step(
                    &mut learner.model,
                    transforms,
                    &episodes,
                    *inner,
                    &mut opt,
                    extra_opt.as_mut(),
                )?;
                (s.loss, s.accuracy)
            }
            LearnerKind::Protonet | LearnerKind::MetaBaseline { .. } => {
                let head = match &kind {
                    LearnerKind::MetaBaseline { logit_scale, .. } => MetricHead::ScaledCosine(*logit_scale),
                    _ => MetricHead::SqEuclidean,
                };
                let model = &learner.model;
                let steps = episodes
                    .par_iter()
                    .map(|e| metric_episode_step(model, &model.params, e, head))
                    .collect::<Result<Vec<_>>>()?;
                let n = steps.len() as f64;
                let grads: Vec<Params> = steps.iter().map(|s| s.grad.clone()).collect();
                let bufs: Vec<Params> = steps.iter().map(|s| s.buffers.clone()).collect();
                opt.update(
                    &mut learner.model.params,
                    &Params::mean(&grads).expect("non-empty batch"),
                );
                learner.model.buffers = Params::mean(&bufs).expect("non-empty batch");
                if let LearnerKind::MetaBaseline { logit_scale, .. } = &mut kind {
                    let ds = steps.iter().map(|s| s.scale_grad).sum::<f64>() / n;
                    let mut p = scale_param(*logit_scale);
                    extra_opt
                        .as_mut()
                        .expect("scale optimiser")
                        .update(&mut p, &scale_param(ds));
                    *logit_scale = scalar(&p.0[0]);
                }
                (
                    steps.iter().map(|s| s.loss).sum::<f64>() / n,
                    steps.iter().map(|s| s.accuracy).sum::<f64>() / n,
                )
            }
            LearnerKind::Simpleshot { .. } => unreachable!("SimpleShot has no episodic phase"),
        };
        learner.kind = kind.clone();
        let mut rec = TrainRecord {
            phase: "episodic".into(),
            step,
            loss,
            accuracy,
            val_accuracy: None,
        };
        let last = step + 1 == cfg.steps;
        if (step + 1) % cfg.val_every == 0 || last {
            if let Some(v) = validate(&learner, data, cfg)? {
                rec.val_accuracy = Some(v);
                if selector.offer(v, step, || snapshot(&learner)) && !last {
                    stopped_early = true;
                    log.push(rec);
                    break;
                }
            }
        }
        log.push(rec);
    }
    finish(learner, selector, log, stopped_early)
}

fn finish<E: Encoder>(
    mut learner: Learner<E>,
    selector: Selector<Snapshot>,
    log: Vec<TrainRecord>,
    stopped_early: bool,
) -> Result<TrainOutcome<E>> {
    let last_step = log.last().map_or(0, |r| r.step);
    let (best_step, best_val_accuracy) = match selector.best {
        Some((score, step, snap)) => {
            learner.model.params = snap.params;
            learner.model.buffers = snap.buffers;
            learner.kind = snap.kind;
            (step, Some(score))
        }
        None => (last_step, None),
    };
    Ok(TrainOutcome {
        learner,
        log,
        best_step,
        best_val_accuracy,
        stopped_early,
    })
}

fn train_simpleshot<E: Encoder + Clone>(
    model: Model<E>,
    data: &TrainData,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<E>> {
    let set = LabelledSet::from_pools(data.store, data.train.pools())?;
    let mut trainer = ConventionalTrainer::new(model, &set, cfg.conventional, cfg.seed)?;
    let mut selector: Selector<Snapshot> = Selector::new(cfg.patience);
    let mut log = Vec::new();
    let mut stopped_early = false;
    let epochs = cfg.conventional.epochs;
    for _ in 0..epochs {
        let r = trainer.run_epoch(&set)?;
        let mut rec = TrainRecord {
            phase: "conventional".into(),
            step: r.epoch,
            loss: r.loss,
            accuracy: r.accuracy,
            val_accuracy: None,
        };
        let last = r.epoch + 1 == epochs;
        if data.val.is_some() && ((r.epoch + 1) % cfg.val_every == 0 || last) {
            let kind = LearnerKind::Simpleshot {
                norm: cfg.norm,
                train_mean: feature_mean(&trainer.model, &set.items)?,
            };
            let learner = Learner::new(trainer.model.clone(), kind.clone());
            if let Some(v) = validate(&learner, data, cfg)? {
                rec.val_accuracy = Some(v);
                let snap = || Snapshot {
                    params: learner.model.params.clone(),
                    buffers: learner.model.buffers.clone(),
                    kind,
                };
                if selector.offer(v, r.epoch, snap) && !last {
                    stopped_early = true;
                    log.push(rec);
                    break;
                }
            }
        }
        log.push(rec);
    }
    let kind = LearnerKind::Simpleshot {
        norm: cfg.norm,
        train_mean: feature_mean(&trainer.model, &set.items)?,
    };
    finish(Learner::new(trainer.model, kind), selector, log, stopped_early)
}
