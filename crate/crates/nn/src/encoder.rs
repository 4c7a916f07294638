//! The encoder contract shared by every learner.

use ndarray::{Array2, Array3, ArrayD, Axis, Ix1, Ix2, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{linear_backward, linear_forward, BnMode};
use crate::params::Params;

/// A differentiable map from a batch of `[mels, frames]` inputs to
/// `[batch, output_dim]` features or logits.
///
/// Parameters and running buffers live outside the encoder so that learners
/// can hold several parameter sets (meta-parameters, adapted copies) for one
/// architecture.
pub trait Encoder: Send + Sync {
    type Cache: Send;

    fn input_shape(&self) -> (usize, usize);
    fn output_dim(&self) -> usize;
    fn init_params(&self, seed: u64) -> Params;

    fn init_buffers(&self) -> Params {
        Params::default()
    }

    fn forward(
        &self,
        params: &Params,
        buffers: &Params,
        x: &Array3<f64>,
        mode: BnMode,
    ) -> Result<(Array2<f64>, Self::Cache)>;

    /// Gradient of `sum(d_out * output)` with respect to every parameter.
    fn backward(&self, params: &Params, cache: &Self::Cache, d_out: &Array2<f64>) -> Params;

    /// Running buffers after folding in a batch-mode forward pass.
    fn updated_buffers(&self, buffers: &Params, _cache: &Self::Cache) -> Params {
        buffers.clone()
    }

    fn check_input(&self, x: &Array3<f64>) -> Result<()> {
        let got = (x.dim().1, x.dim().2);
        if got != self.input_shape() {
            return Err(Error::Shape {
                expected: self.input_shape(),
                got,
            });
        }
        Ok(())
    }
}

/// `y = W vec(x) + b`. A cheap stand-in encoder for tests and fixed features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEncoder {
    pub mels: usize,
    pub frames: usize,
    pub out: usize,
}

impl LinearEncoder {
    pub fn new(mels: usize, frames: usize, out: usize) -> Self {
        LinearEncoder { mels, frames, out }
    }

    fn flat(&self, x: &Array3<f64>) -> Array2<f64> {
        let n = x.dim().0;
        x.as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, self.mels * self.frames))
            .expect("contiguous input")
    }
}

impl Encoder for LinearEncoder {
    type Cache = Array2<f64>;

    fn input_shape(&self) -> (usize, usize) {
        (self.mels, self.frames)
    }

    fn output_dim(&self) -> usize {
        self.out
    }

    fn init_params(&self, seed: u64) -> Params {
        let d = self.mels * self.frames;
        let bound = 1.0 / (d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = ArrayD::from_shape_simple_fn(IxDyn(&[self.out, d]), || rng.gen_range(-bound..bound));
        let b = ArrayD::from_shape_simple_fn(IxDyn(&[self.out]), || rng.gen_range(-bound..bound));
        Params(vec![w, b])
    }

    fn forward(
        &self,
        params: &Params,
        _buffers: &Params,
        x: &Array3<f64>,
        _mode: BnMode,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_input(x)?;
        let xf = self.flat(x);
        let w = params.0[0]
            .view()
            .into_dimensionality::<Ix2>()
            .map_err(|e| Error::Layout(e.to_string()))?;
        let b = params.0[1]
            .view()
            .into_dimensionality::<Ix1>()
            .map_err(|e| Error::Layout(e.to_string()))?;
        Ok((linear_forward(xf.view(), w, b), xf))
    }

    fn backward(&self, params: &Params, cache: &Array2<f64>, d_out: &Array2<f64>) -> Params {
        let w = params.0[0]
            .view()
            .into_dimensionality::<Ix2>()
            .expect("checked in forward");
        let (_, dw, db) = linear_backward(cache.view(), w, d_out.view());
        Params(vec![dw.into_dyn(), db.into_dyn()])
    }
}

/// Stacks equally shaped 2-D inputs into a `[batch, rows, cols]` tensor.
pub fn stack_inputs<'a>(items: impl IntoIterator<Item = ndarray::ArrayView2<'a, f64>>) -> Result<Array3<f64>> {
    let views: Vec<_> = items.into_iter().map(|v| v.insert_axis(Axis(0))).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Layout(e.to_string()))
}
