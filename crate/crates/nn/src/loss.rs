//! Softmax cross-entropy and row-wise helpers.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    /// Gradient of `loss` with respect to the logits.
    pub grad: Array2<f64>,
    pub correct: usize,
}

impl LossOutput {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.grad.nrows().max(1) as f64
    }
}

pub fn log_softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Index of the largest value in each row; the first one wins ties.
pub fn argmax_rows(x: ArrayView2<f64>) -> Vec<usize> {
    x.axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Weighted mean cross-entropy `sum_i w_i CE_i / sum_i w_i`. Without
/// weights every row counts once.
pub fn cross_entropy(logits: ArrayView2<f64>, labels: &[usize], weights: Option<&[f64]>) -> Result<LossOutput> {
    let (n, c) = logits.dim();
    if labels.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::Layout(format!("{n} logit rows, {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Layout(format!("label {bad} out of range for {c} classes")));
    }
    let w: Array1<f64> = match weights {
        Some(w) => Array1::from(w.to_vec()),
        None => Array1::ones(n),
    };
    let total = w.sum();
    let logp = log_softmax(logits);
    let mut loss = 0.0;
    let mut grad = logp.mapv(f64::exp);
    for (i, &y) in labels.iter().enumerate() {
        loss -= w[i] * logp[[i, y]];
        grad[[i, y]] -= 1.0;
        grad.row_mut(i).mapv_inplace(|g| g * w[i] / total);
    }
    loss /= total;
    if !loss.is_finite() {
        return Err(Error::NonFinite);
    }
    let correct = argmax_rows(logits).iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(LossOutput { loss, grad, correct })
}
