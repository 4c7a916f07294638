//! Conventional (non-episodic) classification training shared by SimpleShot
//! and Meta-Baseline, plus inverse-frequency class weighting.

use std::collections::BTreeMap;
use std::sync::Arc;

use fsaudio_core::rng::{shuffle, task_rng};
use fsaudio_core::sampler::ClassPool;
use fsaudio_core::store::SpectrogramStore;
use fsaudio_core::Spectrogram;
use fsaudio_nn::layers::{linear_backward, linear_forward};
use fsaudio_nn::{cross_entropy, Adam, BnMode, Encoder, Params};
use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{to_input, Model};

/// `w_c ∝ 1/count_c`, rescaled to mean 1.
pub fn inverse_frequency(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::invalid("no classes to weight"));
    }
    if counts.contains(&0) {
        return Err(Error::invalid("class with zero samples cannot be weighted"));
    }
    let inv: Vec<f64> = counts.iter().map(|&c| 1.0 / c as f64).collect();
    let mean = inv.iter().sum::<f64>() / inv.len() as f64;
    Ok(inv.into_iter().map(|w| w / mean).collect())
}

pub fn inverse_frequency_weights(counts: &BTreeMap<String, usize>) -> Result<BTreeMap<String, f64>> {
    let w = inverse_frequency(&counts.values().copied().collect::<Vec<_>>())?;
    Ok(counts.keys().cloned().zip(w).collect())
}

#[derive(Debug, Clone)]
pub struct TrainItem {
    pub spectrogram: Arc<Spectrogram>,
    pub label: usize,
}

/// Every sub-clip of every class in the pools, labelled by pool-major class order.
#[derive(Debug, Clone, Default)]
pub struct LabelledSet {
    pub items: Vec<TrainItem>,
    /// `(dataset, class label)` per global index.
    pub classes: Vec<(String, String)>,
    /// Sub-clips per class.
    pub counts: Vec<usize>,
}

impl LabelledSet {
    pub fn from_pools(store: &SpectrogramStore, pools: &[ClassPool]) -> Result<Self> {
        let mut set = LabelledSet::default();
        for pool in pools {
            for class in &pool.classes {
                let label = set.classes.len();
                let mut count = 0;
                for clip in &class.clips {
                    for i in 0..clip.n_subclips {
                        set.items.push(TrainItem {
                            spectrogram: store.subclip(&pool.dataset_id, &clip.clip_id, i)?,
                            label,
                        });
                        count += 1;
                    }
                }
                set.classes.push((pool.dataset_id.clone(), class.label.clone()));
                set.counts.push(count);
            }
        }
        if set.items.is_empty() {
            return Err(Error::invalid("no training material in the given pools"));
        }
        Ok(set)
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConventionalConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Inverse-frequency loss weights per class.
    pub weighted: bool,
}

impl Default for ConventionalConfig {
    fn default() -> Self {
        ConventionalConfig {
            epochs: 20,
            batch_size: 32,
            lr: Adam::DEFAULT_LR,
            weighted: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Encoder plus a linear classifier over its features, trained epoch by epoch.
pub struct ConventionalTrainer<E> {
    pub model: Model<E>,
    /// `[classes, features]` weight and `[classes]` bias.
    pub head: Params,
    opt: Adam,
    weights: Option<Vec<f64>>,
    config: ConventionalConfig,
    seed: u64,
    epoch: usize,
}

impl<E: Encoder> ConventionalTrainer<E> {
    pub fn new(model: Model<E>, data: &LabelledSet, config: ConventionalConfig, seed: u64) -> Result<Self> {
        if config.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        let d = model.encoder.output_dim();
        let c = data.n_classes();
        let bound = 1.0 / (d as f64).sqrt();
        let mut rng = task_rng(seed, u64::MAX);
        let head = Params(vec![
            ArrayD::from_shape_simple_fn(IxDyn(&[c, d]), || rng.gen_range(-bound..bound)),
            ArrayD::from_shape_simple_fn(IxDyn(&[c]), || rng.gen_range(-bound..bound)),
        ]);
        let opt = Adam::new(config.lr, &model.params.clone().concat(head.clone()));
        let weights = config.weighted.then(|| inverse_frequency(&data.counts)).transpose()?;
        Ok(ConventionalTrainer {
            model,
            head,
            opt,
            weights,
            config,
            seed,
            epoch: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// One pass over shuffled mini-batches.
    pub fn run_epoch(&mut self, data: &LabelledSet) -> Result<EpochRecord> {
        let mut order: Vec<usize> = (0..data.items.len()).collect();
        shuffle(&mut order, &mut task_rng(self.seed, self.epoch as u64));
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for batch in order.chunks(self.config.batch_size) {
            let specs: Vec<&Spectrogram> = batch.iter().map(|&i| data.items[i].spectrogram.as_ref()).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| data.items[i].label).collect();
            let x = to_input(&specs)?;
            let (f, cache) = self.model.forward(&self.model.params, &x, BnMode::Batch)?;
            let w = self.head.0[0].view().into_dimensionality().expect("head matrix");
            let b = self.head.0[1].view().into_dimensionality().expect("head bias");
            let logits = linear_forward(f.view(), w, b);
            let row_w: Option<Vec<f64>> = self.weights.as_ref().map(|cw| labels.iter().map(|&l| cw[l]).collect());
            let out = cross_entropy(logits.view(), &labels, row_w.as_deref()).map_err(|_| Error::NonFinite {
                context: format!("conventional epoch {}", self.epoch),
            })?;
            let (df, dw, db) = linear_backward(f.view(), w, out.grad.view());
            let g = self.model.encoder.backward(&self.model.params, &cache, &df);
            self.model.buffers = self.model.encoder.updated_buffers(&self.model.buffers, &cache);

            let mut all = std::mem::take(&mut self.model.params).concat(std::mem::take(&mut self.head));
            let grads = g.concat(Params(vec![dw.into_dyn(), db.into_dyn()]));
            self.opt.update(&mut all, &grads);
            let n_enc = all.len() - 2;
            let (p, h) = all.split_at(n_enc);
            self.model.params = p;
            self.head = h;

            loss_sum += out.loss * batch.len() as f64;
            correct += out.correct;
            seen += batch.len();
        }
        let rec = EpochRecord {
            epoch: self.epoch,
            loss: loss_sum / seen as f64,
            accuracy: correct as f64 / seen as f64,
        };
        self.epoch += 1;
        Ok(rec)
    }

    /// Inference-mode logits of the full classifier.
    pub fn logits(&self, x: &ndarray::Array3<f64>) -> Result<Array2<f64>> {
        let (f, _) = self.model.forward(&self.model.params, x, BnMode::Running)?;
        let w = self.head.0[0].view().into_dimensionality().expect("head matrix");
        let b = self.head.0[1].view().into_dimensionality().expect("head bias");
        Ok(linear_forward(f.view(), w, b))
    }
}

/// Mean inference feature over all items, summed in item order.
pub fn feature_mean<E: Encoder>(model: &Model<E>, items: &[TrainItem]) -> Result<Vec<f64>> {
    if items.is_empty() {
        return Err(Error::invalid("feature mean of an empty set"));
    }
    let feats: Vec<Array1<f64>> = items
        .par_iter()
        .map(|it| model.embed_one(&it.spectrogram))
        .collect::<Result<_>>()?;
    let mut sum = Array1::<f64>::zeros(model.encoder.output_dim());
    for f in &feats {
        sum += f;
    }
    Ok((sum / items.len() as f64).to_vec())
}

pub struct ConventionalOutcome<E> {
    pub model: Model<E>,
    pub head: Params,
    pub train_mean: Vec<f64>,
    pub log: Vec<EpochRecord>,
}

/// Trains encoder and classifier for the configured epochs, then computes
/// the train-feature mean.
pub fn conventional_train<E: Encoder>(
    model: Model<E>,
    data: &LabelledSet,
    config: ConventionalConfig,
    seed: u64,
) -> Result<ConventionalOutcome<E>> {
    let mut trainer = ConventionalTrainer::new(model, data, config, seed)?;
    let mut log = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        log.push(trainer.run_epoch(data)?);
    }
    let train_mean = feature_mean(&trainer.model, &data.items)?;
    Ok(ConventionalOutcome {
        model: trainer.model,
        head: trainer.head,
        train_mean,
        log,
    })
}
