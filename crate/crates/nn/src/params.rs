//! Flat lists of parameter tensors and the arithmetic the learners need.

use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordered list of tensors. Two `Params` are compatible when their
/// tensor shapes agree position by position.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Params(pub Vec<ArrayD<f64>>);

impl Params {
    pub fn zeros_like(&self) -> Params {
        Params(self.0.iter().map(|t| ArrayD::zeros(t.raw_dim())).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn n_elements(&self) -> usize {
        self.0.iter().map(|t| t.len()).sum()
    }

    pub fn check_compatible(&self, other: &Params) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Layout(format!("{} tensors vs {}", self.len(), other.len())));
        }
        for (i, (a, b)) in self.0.iter().zip(&other.0).enumerate() {
            if a.shape() != b.shape() {
                return Err(Error::Layout(format!("tensor {i}: {:?} vs {:?}", a.shape(), b.shape())));
            }
        }
        Ok(())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Params) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            Zip::from(a).and(b).for_each(|x, &y| *x += alpha * y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.0 {
            t.mapv_inplace(|v| v * s);
        }
    }

    pub fn dot(&self, other: &Params) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    pub fn max_abs_diff(&self, other: &Params) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flat_map(|t| t.iter().copied()).collect()
    }

    /// Overwrites every value from a flat slice in [`Params::flatten`] order.
    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n_elements() {
            return Err(Error::Layout(format!(
                "{} values for {} elements",
                values.len(),
                self.n_elements()
            )));
        }
        let mut it = values.iter();
        for t in &mut self.0 {
            for v in t.iter_mut() {
                *v = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Mean of several compatible parameter lists, summed in slice order.
    pub fn mean(items: &[Params]) -> Option<Params> {
        let first = items.first()?;
        let mut acc = first.clone();
        for p in &items[1..] {
            acc.axpy(1.0, p);
        }
        acc.scale(1.0 / items.len() as f64);
        Some(acc)
    }

    pub fn concat(mut self, other: Params) -> Params {
        self.0.extend(other.0);
        self
    }

    /// Splits off the tensors from `at` onwards.
    pub fn split_at(mut self, at: usize) -> (Params, Params) {
        let tail = self.0.split_off(at);
        (self, Params(tail))
    }
}
