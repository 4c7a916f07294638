//! Simple classifiers over externally computed, fixed clip features.

use std::collections::HashMap;
use std::path::Path;

use fsaudio_core::rng::task_rng;
use fsaudio_core::sampler::{ClassPool, EpisodePlan, EpisodeSampler};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{EvalOptions, EvalReport};
use crate::metric::{ncc_predict, FeatureNorm};

/// One feature vector per clip id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureTable {
    dim: usize,
    rows: HashMap<String, Vec<f64>>,
}

impl FeatureTable {
    /// Lines of `clip_id v1 v2 ...`; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut table = FeatureTable::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |message: String| Error::BadFeatureTable { line: i + 1, message };
            let mut parts = line.split_whitespace();
            let id = parts.next().expect("non-empty line");
            let values: Vec<f64> = parts
                .map(|v| v.parse::<f64>().map_err(|e| bad(format!("`{v}`: {e}"))))
                .collect::<Result<_>>()?;
            if values.is_empty() {
                return Err(bad("no feature values".into()));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(bad("non-finite feature value".into()));
            }
            table.insert(id, values).map_err(|e| bad(e.to_string()))?;
        }
        if table.rows.is_empty() {
            return Err(Error::BadFeatureTable {
                line: 0,
                message: "no feature rows".into(),
            });
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read feature table {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn insert(&mut self, clip_id: &str, values: Vec<f64>) -> Result<()> {
        if self.rows.is_empty() {
            self.dim = values.len();
        } else if values.len() != self.dim {
            return Err(Error::invalid(format!(
                "clip `{clip_id}` has {} values, expected {}",
                values.len(),
                self.dim
            )));
        }
        if self.rows.insert(clip_id.to_string(), values).is_some() {
            return Err(Error::invalid(format!("duplicate clip `{clip_id}`")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, clip_id: &str) -> Result<&[f64]> {
        self.rows
            .get(clip_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingFeature(clip_id.to_string()))
    }

    /// Every clip of every pool must have a row.
    pub fn check_covers(&self, pools: &[ClassPool]) -> Result<()> {
        for clip in pools.iter().flat_map(|p| &p.classes).flat_map(|c| &c.clips) {
            self.get(&clip.clip_id)?;
        }
        Ok(())
    }

    /// Mean feature over all clips of the pools.
    pub fn mean_over(&self, pools: &[ClassPool]) -> Result<Vec<f64>> {
        let mut sum = vec![0.0; self.dim];
        let mut n = 0usize;
        for clip in pools.iter().flat_map(|p| &p.classes).flat_map(|c| &c.clips) {
            for (s, v) in sum.iter_mut().zip(self.get(&clip.clip_id)?) {
                *s += v;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::invalid("mean over empty pools"));
        }
        Ok(sum.into_iter().map(|s| s / n as f64).collect())
    }

    fn stack<'a>(&self, ids: impl Iterator<Item = &'a str>) -> Result<Array2<f64>> {
        let rows: Vec<&[f64]> = ids.map(|id| self.get(id)).collect::<Result<_>>()?;
        let mut out = Array2::zeros((rows.len(), self.dim));
        for (mut r, v) in out.axis_iter_mut(Axis(0)).zip(rows) {
            r.assign(&ArrayView1::from(v));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    /// Hinge-loss weight against the L2 penalty.
    pub c: f64,
    /// Stop when the projected-gradient spread falls below this.
    pub tolerance: f64,
    pub max_epochs: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            tolerance: 1e-4,
            max_epochs: 1000,
        }
    }
}

/// One-vs-rest linear SVMs with a bias feature, fit by dual coordinate
/// descent in a fixed sample order.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    /// `[classes, dim + 1]`, bias last.
    pub weights: Array2<f64>,
}

fn augment(x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::ones((x.nrows(), x.ncols() + 1));
    out.slice_mut(ndarray::s![.., ..x.ncols()]).assign(&x);
    out
}

fn fit_binary(x: &Array2<f64>, y: &[f64], cfg: SvmConfig) -> Array1<f64> {
    let n = x.nrows();
    let q: Vec<f64> = x.axis_iter(Axis(0)).map(|r| r.dot(&r)).collect();
    let mut alpha = vec![0.0; n];
    let mut w = Array1::<f64>::zeros(x.ncols());
    for _ in 0..cfg.max_epochs {
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..n {
            let xi = x.row(i);
            let g = y[i] * w.dot(&xi) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == cfg.c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg != 0.0 && q[i] > 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / q[i]).clamp(0.0, cfg.c);
                w.scaled_add((alpha[i] - old) * y[i], &xi);
            }
        }
        if pg_max - pg_min < cfg.tolerance {
            break;
        }
    }
    w
}

impl LinearSvm {
    pub fn fit(features: ArrayView2<f64>, labels: &[usize], n_classes: usize, cfg: SvmConfig) -> Result<Self> {
        if features.nrows() != labels.len() || labels.is_empty() {
            return Err(Error::invalid("one label per support feature required"));
        }
        if cfg.c <= 0.0 || cfg.tolerance <= 0.0 {
            return Err(Error::invalid("SVM needs positive C and tolerance"));
        }
        let x = augment(features);
        let mut weights = Array2::zeros((n_classes, x.ncols()));
        for c in 0..n_classes {
            let y: Vec<f64> = labels.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
            weights.row_mut(c).assign(&fit_binary(&x, &y, cfg));
        }
        Ok(LinearSvm { weights })
    }

    pub fn decision(&self, features: ArrayView2<f64>) -> Array2<f64> {
        augment(features).dot(&self.weights.t())
    }

    pub fn predict(&self, features: ArrayView2<f64>) -> Vec<usize> {
        fsaudio_nn::argmax_rows(self.decision(features).view())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "classifier", rename_all = "snake_case")]
pub enum FixedClassifier {
    /// Nearest centroid after centring by `mean` and L2 normalisation.
    NccCl2n {
        mean: Vec<f64>,
    },
    LinearSvm(SvmConfig),
}

impl FixedClassifier {
    pub fn name(&self) -> &'static str {
        match self {
            FixedClassifier::NccCl2n { .. } => "ncc_cl2n",
            FixedClassifier::LinearSvm(_) => "linear_svm",
        }
    }

    pub fn predict_plan(&self, table: &FeatureTable, plan: &EpisodePlan) -> Result<Vec<usize>> {
        let s = table.stack(plan.support.iter().map(|i| i.clip_id.as_str()))?;
        let q = table.stack(plan.query.iter().map(|i| i.clip_id.as_str()))?;
        let labels: Vec<usize> = plan.support.iter().map(|i| i.class_index).collect();
        let n = plan.spec.n_way;
        match self {
            FixedClassifier::NccCl2n { mean } => {
                if mean.len() != table.dim() {
                    return Err(Error::invalid("feature mean width differs from the table"));
                }
                ncc_predict(s.view(), &labels, q.view(), n, FeatureNorm::Cl2n, Some(mean))
            }
            FixedClassifier::LinearSvm(cfg) => Ok(LinearSvm::fit(s.view(), &labels, n, *cfg)?.predict(q.view())),
        }
    }
}

/// Task-sampled accuracy of a simple classifier over fixed features.
pub fn fixed_feature_evaluate(
    table: &FeatureTable,
    sampler: &EpisodeSampler,
    classifier: &FixedClassifier,
    dataset_id: &str,
    opts: EvalOptions,
) -> Result<EvalReport> {
    if opts.n_tasks == 0 {
        return Err(Error::invalid("n_tasks must be positive"));
    }
    table.check_covers(sampler.pools())?;
    let accs: Vec<f64> = (0..opts.n_tasks)
        .into_par_iter()
        .map(|i| {
            let plan = sampler.plan(&mut task_rng(opts.seed, i as u64))?;
            let pred = classifier.predict_plan(table, &plan)?;
            let hits = plan
                .query
                .iter()
                .zip(&pred)
                .filter(|(it, &p)| it.class_index == p)
                .count();
            Ok(hits as f64 / plan.query.len() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport::from_accuracies(
        dataset_id,
        classifier.name(),
        sampler.spec(),
        opts.seed,
        accs,
        opts.keep_per_task,
    ))
}
