//! Prototype, distance and feature-normalisation math shared by the metric learners.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor for feature norms before division.
pub const NORM_EPSILON: f64 = 1e-12;

/// Mean feature per class. Rows of `features` are labelled by `labels` in `0..n_way`.
pub fn prototypes(features: ArrayView2<f64>, labels: &[usize], n_way: usize) -> Result<Array2<f64>> {
    let mut out = Array2::<f64>::zeros((n_way, features.ncols()));
    let mut counts = vec![0usize; n_way];
    for (row, &y) in features.axis_iter(Axis(0)).zip(labels) {
        if y >= n_way {
            return Err(Error::invalid(format!("label {y} outside {n_way}-way episode")));
        }
        out.row_mut(y).scaled_add(1.0, &row);
        counts[y] += 1;
    }
    for (mut row, &c) in out.axis_iter_mut(Axis(0)).zip(&counts) {
        if c == 0 {
            return Err(Error::invalid("class without support examples"));
        }
        row /= c as f64;
    }
    Ok(out)
}

/// Spreads prototype gradients back onto the support rows they averaged.
pub fn prototypes_backward(d_protos: ArrayView2<f64>, labels: &[usize]) -> Array2<f64> {
    let mut counts = vec![0usize; d_protos.nrows()];
    for &y in labels {
        counts[y] += 1;
    }
    let mut out = Array2::<f64>::zeros((labels.len(), d_protos.ncols()));
    for (mut row, &y) in out.axis_iter_mut(Axis(0)).zip(labels) {
        row.assign(&(&d_protos.row(y) / counts[y] as f64));
    }
    out
}

/// `logits[i, n] = -||q_i - c_n||²`
pub fn neg_sq_euclidean(queries: ArrayView2<f64>, centroids: ArrayView2<f64>) -> Array2<f64> {
    Array2::from_shape_fn((queries.nrows(), centroids.nrows()), |(i, n)| {
        -queries
            .row(i)
            .iter()
            .zip(centroids.row(n).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    })
}

/// Gradients of a loss with logit gradient `g` through [`neg_sq_euclidean`].
pub fn neg_sq_euclidean_backward(
    queries: ArrayView2<f64>,
    centroids: ArrayView2<f64>,
    g: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let mut dq = Array2::<f64>::zeros(queries.raw_dim());
    let mut dc = Array2::<f64>::zeros(centroids.raw_dim());
    for i in 0..queries.nrows() {
        for n in 0..centroids.nrows() {
            let diff = &queries.row(i) - &centroids.row(n);
            dq.row_mut(i).scaled_add(-2.0 * g[[i, n]], &diff);
            dc.row_mut(n).scaled_add(2.0 * g[[i, n]], &diff);
        }
    }
    (dq, dc)
}

fn norms(x: ArrayView2<f64>) -> Array1<f64> {
    x.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(NORM_EPSILON))
}

/// `cos[i, n]` between query rows and centroid rows.
pub fn cosine(queries: ArrayView2<f64>, centroids: ArrayView2<f64>) -> Array2<f64> {
    let (qn, cn) = (norms(queries), norms(centroids));
    let mut out = queries.dot(&centroids.t());
    for ((i, n), v) in out.indexed_iter_mut() {
        *v /= qn[i] * cn[n];
    }
    out
}

/// Gradients through `logits = s * cosine(q, c)`: returns `(dq, dc, ds)`.
pub fn scaled_cosine_backward(
    queries: ArrayView2<f64>,
    centroids: ArrayView2<f64>,
    scale: f64,
    g: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>, f64) {
    let (qn, cn) = (norms(queries), norms(centroids));
    let cos = cosine(queries, centroids);
    let ds = (&cos * &g).sum();
    let mut dq = Array2::<f64>::zeros(queries.raw_dim());
    let mut dc = Array2::<f64>::zeros(centroids.raw_dim());
    for i in 0..queries.nrows() {
        for n in 0..centroids.nrows() {
            let w = scale * g[[i, n]];
            if w == 0.0 {
                continue;
            }
            let (q, c) = (queries.row(i), centroids.row(n));
            // d cos / dq = c / (|q||c|) - cos * q / |q|²
            dq.row_mut(i).scaled_add(w / (qn[i] * cn[n]), &c);
            dq.row_mut(i).scaled_add(-w * cos[[i, n]] / (qn[i] * qn[i]), &q);
            dc.row_mut(n).scaled_add(w / (qn[i] * cn[n]), &q);
            dc.row_mut(n).scaled_add(-w * cos[[i, n]] / (cn[n] * cn[n]), &c);
        }
    }
    (dq, dc, ds)
}

/// Feature transform applied before nearest-centroid classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureNorm {
    /// Centre on the train-feature mean, then L2-normalise.
    #[default]
    Cl2n,
    /// L2-normalise only.
    L2n,
    /// Unnormalised.
    Un,
}

impl std::str::FromStr for FeatureNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cl2n" => Ok(FeatureNorm::Cl2n),
            "l2n" => Ok(FeatureNorm::L2n),
            "un" => Ok(FeatureNorm::Un),
            other => Err(Error::invalid(format!("unknown feature normalisation `{other}`"))),
        }
    }
}

pub fn normalize_features(features: ArrayView2<f64>, norm: FeatureNorm, mean: Option<&[f64]>) -> Result<Array2<f64>> {
    let mut out = features.to_owned();
    if norm == FeatureNorm::Cl2n {
        let mean = mean.ok_or_else(|| Error::invalid("CL2N needs a train-feature mean"))?;
        if mean.len() != out.ncols() {
            return Err(Error::invalid(format!(
                "train mean has {} dims, features have {}",
                mean.len(),
                out.ncols()
            )));
        }
        out -= &ndarray::ArrayView1::from(mean);
    }
    if norm != FeatureNorm::Un {
        for mut row in out.axis_iter_mut(Axis(0)) {
            let n = row.dot(&row).sqrt().max(NORM_EPSILON);
            row /= n;
        }
    }
    Ok(out)
}

/// Index of the nearest centroid (squared Euclidean) for each query; ties go
/// to the lower class index.
pub fn nearest_centroid(queries: ArrayView2<f64>, centroids: ArrayView2<f64>) -> Vec<usize> {
    fsaudio_nn::argmax_rows(neg_sq_euclidean(queries, centroids).view())
}

/// Normalise, build centroids from the support set and label the queries.
pub fn ncc_predict(
    support: ArrayView2<f64>,
    support_labels: &[usize],
    queries: ArrayView2<f64>,
    n_way: usize,
    norm: FeatureNorm,
    mean: Option<&[f64]>,
) -> Result<Vec<usize>> {
    let s = normalize_features(support, norm, mean)?;
    let q = normalize_features(queries, norm, mean)?;
    let c = prototypes(s.view(), support_labels, n_way)?;
    Ok(nearest_centroid(q.view(), c.view()))
}
