//! Experiment configuration: a TOML document, overridable by flags, written
//! back in resolved form to every run directory.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fsaudio_core::pipeline::spectrogram::SpectrogramConfig;
use fsaudio_core::sampler::{SamplerConfig, SamplerMode};
use fsaudio_core::{EpisodeSpec, NormMode, Partition};
use fsaudio_meta::TrainConfig;
use fsaudio_nn::CrnnConfig;
use serde::{Deserialize, Serialize};

use crate::failure::invalid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Training datasets; each needs a split file.
    pub datasets: Vec<String>,
    #[serde(default = "default_mode")]
    pub mode: SamplerMode,
    #[serde(default = "default_norm")]
    pub normalization: NormMode,
    /// Held-out datasets, evaluated on all their classes.
    #[serde(default)]
    pub cross: Vec<String>,
}

fn default_mode() -> SamplerMode {
    SamplerMode::Single
}

fn default_norm() -> NormMode {
    NormMode::Global
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_tasks: usize,
    pub seed: u64,
    pub keep_per_task: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_tasks: fsaudio_meta::eval::DEFAULT_TASKS,
            seed: 0,
            keep_per_task: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Run directory, relative to the workspace root.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub data: DataConfig,
    #[serde(default = "default_episode")]
    pub episode: EpisodeSpec,
    #[serde(default)]
    pub spectrogram: SpectrogramConfig,
    /// Derived from the spectrogram shape when absent.
    #[serde(default)]
    pub backbone: Option<CrnnConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_episode() -> EpisodeSpec {
    EpisodeSpec::default()
}

/// Flag values that replace file values when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub datasets: Vec<String>,
    pub cross: Vec<String>,
    pub mode: Option<SamplerMode>,
    pub algorithm: Option<fsaudio_meta::Algorithm>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub n_way: Option<usize>,
    pub k_shot: Option<usize>,
    pub n_tasks: Option<usize>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text)
    }

    /// Config from flags alone, when no file is given.
    pub fn from_overrides(o: &Overrides) -> Result<Self> {
        if o.datasets.is_empty() {
            return Err(invalid("no training datasets: pass --config or --dataset"));
        }
        Ok(ExperimentConfig {
            output_dir: None,
            data: DataConfig {
                datasets: Vec::new(),
                mode: default_mode(),
                normalization: default_norm(),
                cross: Vec::new(),
            },
            episode: default_episode(),
            spectrogram: SpectrogramConfig::default(),
            backbone: None,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(p) = &o.output_dir {
            self.output_dir = Some(p.clone());
        }
        if !o.datasets.is_empty() {
            self.data.datasets = o.datasets.clone();
        }
        if !o.cross.is_empty() {
            self.data.cross = o.cross.clone();
        }
        if let Some(m) = o.mode {
            self.data.mode = m;
        }
        if let Some(a) = o.algorithm {
            self.train.algorithm = a;
        }
        if let Some(s) = o.steps {
            self.train.steps = s;
        }
        if let Some(s) = o.seed {
            self.train.seed = s;
        }
        if let Some(n) = o.n_way {
            self.episode.n_way = n;
        }
        if let Some(k) = o.k_shot {
            self.episode.k_shot = k;
        }
        if let Some(n) = o.n_tasks {
            self.eval.n_tasks = n;
        }
    }

    /// Fills derived fields and checks everything that needs no file access.
    pub fn resolve(mut self) -> Result<Self> {
        let shape = self.spectrogram.output_shape();
        let backbone = self
            .backbone
            .take()
            .unwrap_or_else(|| CrnnConfig::default().with_input(shape.0, shape.1));
        if self.output_dir.is_none() {
            self.output_dir = Some(PathBuf::from("runs").join(self.train.algorithm.as_str()));
        }
        self.backbone = Some(backbone);
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.datasets.is_empty() {
            return Err(invalid("data.datasets is empty"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for ds in d.datasets.iter().chain(&d.cross) {
            check_dataset_id(ds)?;
            if !seen.insert(ds) {
                return Err(invalid(format!("dataset `{ds}` listed twice")));
            }
        }
        match (d.mode, d.datasets.len()) {
            (SamplerMode::Single, 1) => {}
            (SamplerMode::Single, n) => return Err(invalid(format!("single mode takes one dataset, got {n}"))),
            (_, 1) => return Err(invalid("joint modes need at least two datasets")),
            _ => {}
        }
        self.spectrogram
            .validate()
            .map_err(|e| invalid(format!("spectrogram: {e}")))?;
        self.episode.validate().map_err(|e| invalid(format!("episode: {e}")))?;
        let backbone = self.backbone();
        backbone.validate().map_err(|e| invalid(format!("backbone: {e}")))?;
        let shape = self.spectrogram.output_shape();
        if (backbone.input_mels, backbone.input_frames) != shape {
            return Err(invalid(format!(
                "backbone expects {}x{} inputs but the spectrogram yields {}x{}",
                backbone.input_mels, backbone.input_frames, shape.0, shape.1
            )));
        }
        self.train.validate().map_err(|e| invalid(format!("train: {e}")))?;
        if self.eval.n_tasks == 0 {
            return Err(invalid("eval.n_tasks must be positive"));
        }
        Ok(())
    }

    /// Resolved backbone; panics before [`ExperimentConfig::resolve`].
    pub fn backbone(&self) -> &CrnnConfig {
        self.backbone.as_ref().expect("resolved config")
    }

    pub fn output_dir(&self) -> &Path {
        self.output_dir.as_deref().expect("resolved config")
    }

    /// Sampler over the training partitions, seeded from the training seed.
    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            spec: self.episode,
            mode: self.data.mode,
            datasets: self
                .data
                .datasets
                .iter()
                .map(|d| (d.clone(), Partition::Train))
                .collect(),
            seed: self.train.seed,
            subclip_policy: Default::default(),
        }
    }

    pub fn render(&self) -> Result<String> {
        toml::to_string(self).context("serialising config")
    }
}

/// Dataset ids become file names, so they stay plain.
pub fn check_dataset_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !id.starts_with('.');
    if !ok {
        return Err(invalid(format!("dataset id `{id}` must be alphanumeric with - _ .")));
    }
    Ok(())
}
