//! Task-sampled evaluation with normal-approximation confidence intervals,
//! and the shot and way sweeps.

use fsaudio_core::rng::task_rng;
use fsaudio_core::sampler::EpisodeSampler;
use fsaudio_core::stats::{ci95_halfwidth, mean};
use fsaudio_core::store::SpectrogramStore;
use fsaudio_core::{Episode, EpisodeSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::EpisodeClassifier;

pub const CI_METHOD: &str = "normal_approximation_1.96_sample_std";
pub const DEFAULT_TASKS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_id: String,
    pub algorithm: String,
    pub spec: EpisodeSpec,
    pub n_tasks: usize,
    pub mean_accuracy: f64,
    pub ci95_halfwidth: f64,
    pub ci_method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_task_accuracies: Option<Vec<f64>>,
    pub seed: u64,
}

impl EvalReport {
    pub fn from_accuracies(
        dataset_id: &str,
        algorithm: &str,
        spec: EpisodeSpec,
        seed: u64,
        accuracies: Vec<f64>,
        keep_per_task: bool,
    ) -> Self {
        EvalReport {
            dataset_id: dataset_id.to_string(),
            algorithm: algorithm.to_string(),
            spec,
            n_tasks: accuracies.len(),
            mean_accuracy: mean(&accuracies),
            ci95_halfwidth: ci95_halfwidth(&accuracies),
            ci_method: CI_METHOD.to_string(),
            per_task_accuracies: keep_per_task.then_some(accuracies),
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub n_tasks: usize,
    pub seed: u64,
    pub keep_per_task: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            n_tasks: DEFAULT_TASKS,
            seed: 0,
            keep_per_task: false,
        }
    }
}

/// Fraction of queries whose prediction matches the episode label.
pub fn episode_accuracy(episode: &Episode, predictions: &[usize]) -> Result<f64> {
    let labels = episode.query_labels();
    if predictions.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} queries",
            predictions.len(),
            labels.len()
        )));
    }
    let hits = labels.iter().zip(predictions).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Per-task accuracies; task `i` draws everything from stream `i` under the seed.
pub fn task_accuracies<C: EpisodeClassifier + ?Sized>(
    classifier: &C,
    store: &SpectrogramStore,
    sampler: &EpisodeSampler,
    n_tasks: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = sampler.spec().n_way;
    if let Some(width) = classifier.fixed_way() {
        if n > width {
            return Err(Error::Unsupported(format!(
                "{} has a {width}-way output, cannot run {n}-way tasks",
                classifier.name()
            )));
        }
    }
    (0..n_tasks)
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(seed, i as u64);
            let episode = sampler.sample(store, &mut rng)?;
            let pred = classifier.predict(&episode, &mut rng)?;
            episode_accuracy(&episode, &pred)
        })
        .collect()
}

pub fn evaluate<C: EpisodeClassifier + ?Sized>(
    classifier: &C,
    store: &SpectrogramStore,
    sampler: &EpisodeSampler,
    dataset_id: &str,
    opts: EvalOptions,
) -> Result<EvalReport> {
    if opts.n_tasks == 0 {
        return Err(Error::invalid("n_tasks must be positive"));
    }
    let accs = task_accuracies(classifier, store, sampler, opts.n_tasks, opts.seed)?;
    Ok(EvalReport::from_accuracies(
        dataset_id,
        &classifier.name(),
        sampler.spec(),
        opts.seed,
        accs,
        opts.keep_per_task,
    ))
}

/// One report per shot count; N and q stay as trained.
pub fn sweep_shots<C: EpisodeClassifier + ?Sized>(
    classifier: &C,
    store: &SpectrogramStore,
    sampler: &EpisodeSampler,
    dataset_id: &str,
    k_values: &[usize],
    opts: EvalOptions,
) -> Result<Vec<EvalReport>> {
    k_values
        .iter()
        .map(|&k| {
            let spec = EpisodeSpec::new(sampler.spec().n_way, k, sampler.spec().q_queries)?;
            evaluate(classifier, store, &sampler.with_spec(spec)?, dataset_id, opts)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub n_way: usize,
    pub k_shot: usize,
    pub report: Option<EvalReport>,
    pub unavailable_reason: Option<String>,
}

/// One entry per way count at the sampler's k and q. Rejects learners
/// with a fixed-width output.
pub fn sweep_ways<C: EpisodeClassifier + ?Sized>(
    classifier: &C,
    store: &SpectrogramStore,
    sampler: &EpisodeSampler,
    dataset_id: &str,
    n_values: &[usize],
    opts: EvalOptions,
) -> Result<Vec<SweepEntry>> {
    if classifier.fixed_way().is_some() {
        return Err(Error::Unsupported(format!(
            "{} has a fixed-size output and is excluded from way sweeps",
            classifier.name()
        )));
    }
    let base = sampler.spec();
    n_values
        .iter()
        .map(|&n| {
            let spec = EpisodeSpec::new(n, base.k_shot, base.q_queries)?;
            match sampler.with_spec(spec) {
                Ok(s) => Ok(SweepEntry {
                    n_way: n,
                    k_shot: base.k_shot,
                    report: Some(evaluate(classifier, store, &s, dataset_id, opts)?),
                    unavailable_reason: None,
                }),
                Err(e @ fsaudio_core::Error::TooFewClasses { .. }) => Ok(SweepEntry {
                    n_way: n,
                    k_shot: base.k_shot,
                    report: None,
                    unavailable_reason: Some(e.to_string()),
                }),
                Err(e) => Err(e.into()),
            }
        })
        .collect()
}
