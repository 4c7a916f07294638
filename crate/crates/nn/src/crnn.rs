//! Convolutional-recurrent encoder: conv blocks, a GRU over time, a linear head.

use ndarray::{Array1, Array2, Array3, Array4, ArrayD, Axis, Ix1, Ix2, Ix4, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::layers::{
    bn_relu_backward, bn_relu_forward, conv3x3_backward, conv3x3_forward, gru_backward, gru_forward, linear_backward,
    linear_forward, maxpool2_backward, maxpool2_forward, BnCache, BnMode, GruCache, GruParams, PoolCache,
};
use crate::params::Params;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Classifier with one logit per episode class.
    NWay(usize),
    /// Feature vector of the given width.
    Embedding(usize),
}

impl Head {
    pub fn dim(&self) -> usize {
        match *self {
            Head::NWay(n) | Head::Embedding(n) => n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    #[default]
    LastHidden,
    MeanHidden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrnnConfig {
    /// Output channels of each conv block; the input has one channel.
    pub conv_channels: Vec<usize>,
    pub rnn_hidden: usize,
    pub rnn_layers: usize,
    pub bidirectional: bool,
    pub head: Head,
    #[serde(default)]
    pub readout: Readout,
    pub input_mels: usize,
    pub input_frames: usize,
    #[serde(default = "default_momentum")]
    pub bn_momentum: f64,
}

fn default_momentum() -> f64 {
    0.1
}

impl Default for CrnnConfig {
    /// Four 64-channel blocks, 64-unit GRU and a 64-d embedding over 64x498 inputs.
    fn default() -> Self {
        CrnnConfig {
            conv_channels: vec![64; 4],
            rnn_hidden: 64,
            rnn_layers: 1,
            bidirectional: false,
            head: Head::Embedding(64),
            readout: Readout::LastHidden,
            input_mels: 64,
            input_frames: 498,
            bn_momentum: default_momentum(),
        }
    }
}

impl CrnnConfig {
    /// Narrower blocks over the 32x125 desk spectrogram, for CPU-only runs.
    pub fn desk() -> Self {
        CrnnConfig {
            conv_channels: vec![16; 4],
            input_mels: 32,
            input_frames: 125,
            ..Default::default()
        }
    }

    pub fn with_head(&self, head: Head) -> Self {
        CrnnConfig { head, ..self.clone() }
    }

    pub fn with_input(&self, mels: usize, frames: usize) -> Self {
        CrnnConfig {
            input_mels: mels,
            input_frames: frames,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(Error::Config(
                "need at least one conv block, all widths positive".into(),
            ));
        }
        if self.rnn_layers != 1 || self.bidirectional {
            return Err(Error::Config(
                "only a single unidirectional recurrent layer is supported".into(),
            ));
        }
        if self.rnn_hidden == 0 || self.head.dim() == 0 {
            return Err(Error::Config("hidden and head sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("batch-norm momentum must lie in [0, 1]".into()));
        }
        self.conv_output_dims().map(|_| ())
    }

    /// `(height, width)` of the last conv block's output.
    pub fn conv_output_dims(&self) -> Result<(usize, usize)> {
        let blocks = self.conv_channels.len();
        let (mut h, mut w) = (self.input_mels, self.input_frames);
        for _ in 0..blocks {
            h /= 2;
            w /= 2;
        }
        if h == 0 || w == 0 {
            return Err(Error::InputTooSmall {
                mels: self.input_mels,
                frames: self.input_frames,
                blocks,
            });
        }
        Ok((h, w))
    }

    /// Width of each GRU input step: channels times remaining mel bins.
    pub fn rnn_input_dim(&self) -> Result<usize> {
        Ok(self.conv_channels.last().copied().unwrap_or(0) * self.conv_output_dims()?.0)
    }

    /// Parameter tensor shapes in storage order.
    pub fn param_shapes(&self) -> Result<Vec<Vec<usize>>> {
        self.validate()?;
        let mut shapes = Vec::new();
        let mut cin = 1;
        for &c in &self.conv_channels {
            shapes.extend([vec![c, cin, 3, 3], vec![c], vec![c], vec![c]]);
            cin = c;
        }
        let (d, h) = (self.rnn_input_dim()?, self.rnn_hidden);
        shapes.extend([vec![3 * h, d], vec![3 * h, h], vec![3 * h], vec![3 * h]]);
        shapes.extend([vec![self.head.dim(), h], vec![self.head.dim()]]);
        Ok(shapes)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.param_shapes()?.iter().map(|s| s.iter().product::<usize>()).sum())
    }
}

/// Activations kept for the backward pass.
pub struct CrnnCache {
    block_inputs: Vec<Array4<f64>>,
    bn: Vec<BnCache>,
    pools: Vec<PoolCache>,
    pooled_dim: (usize, usize, usize, usize),
    gru: GruCache,
    readout: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crnn {
    config: CrnnConfig,
}

const PER_BLOCK: usize = 4;

fn view1(t: &ArrayD<f64>) -> ndarray::ArrayView1<'_, f64> {
    t.view().into_dimensionality::<Ix1>().expect("vector parameter")
}

fn view2(t: &ArrayD<f64>) -> ndarray::ArrayView2<'_, f64> {
    t.view().into_dimensionality::<Ix2>().expect("matrix parameter")
}

impl Crnn {
    pub fn new(config: CrnnConfig) -> Result<Self> {
        config.validate()?;
        Ok(Crnn { config })
    }

    pub fn config(&self) -> &CrnnConfig {
        &self.config
    }

    fn n_blocks(&self) -> usize {
        self.config.conv_channels.len()
    }

    fn gru_offset(&self) -> usize {
        self.n_blocks() * PER_BLOCK
    }

    fn gru_params<'a>(&self, params: &'a Params) -> GruParams<'a> {
        let o = self.gru_offset();
        GruParams {
            w_ih: view2(&params.0[o]),
            w_hh: view2(&params.0[o + 1]),
            b_ih: view1(&params.0[o + 2]),
            b_hh: view1(&params.0[o + 3]),
        }
    }

    fn check_params(&self, params: &Params, buffers: &Params) -> Result<()> {
        let shapes = self.config.param_shapes()?;
        if params.len() != shapes.len() || buffers.len() != 2 * self.n_blocks() {
            return Err(Error::Layout(format!(
                "expected {} tensors and {} buffers, got {} and {}",
                shapes.len(),
                2 * self.n_blocks(),
                params.len(),
                buffers.len()
            )));
        }
        for (i, (t, s)) in params.0.iter().zip(&shapes).enumerate() {
            if t.shape() != s.as_slice() {
                return Err(Error::Layout(format!("tensor {i}: {:?}, expected {s:?}", t.shape())));
            }
        }
        Ok(())
    }
}

impl Encoder for Crnn {
    type Cache = CrnnCache;

    fn input_shape(&self) -> (usize, usize) {
        (self.config.input_mels, self.config.input_frames)
    }

    fn output_dim(&self) -> usize {
        self.config.head.dim()
    }

    /// Uniform `±1/sqrt(fan_in)` weights and biases; unit BN scale, zero shift.
    fn init_params(&self, seed: u64) -> Params {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = self.config.param_shapes().expect("validated config");
        let mut out = Vec::with_capacity(shapes.len());
        let mut uniform = |shape: &[usize], fan_in: usize| {
            let b = 1.0 / (fan_in as f64).sqrt();
            ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.gen_range(-b..b))
        };
        let mut cin = 1;
        for (i, &c) in self.config.conv_channels.iter().enumerate() {
            let s = &shapes[i * PER_BLOCK..];
            out.push(uniform(&s[0], cin * 9));
            out.push(uniform(&s[1], cin * 9));
            out.push(ArrayD::ones(IxDyn(&s[2])));
            out.push(ArrayD::zeros(IxDyn(&s[3])));
            cin = c;
        }
        let o = self.gru_offset();
        let h = self.config.rnn_hidden;
        for s in &shapes[o..o + 4] {
            out.push(uniform(s, h));
        }
        out.push(uniform(&shapes[o + 4], h));
        out.push(uniform(&shapes[o + 5], h));
        Params(out)
    }

    /// Running mean 0 and variance 1 per block.
    fn init_buffers(&self) -> Params {
        Params(
            self.config
                .conv_channels
                .iter()
                .flat_map(|&c| [ArrayD::zeros(IxDyn(&[c])), ArrayD::ones(IxDyn(&[c]))])
                .collect(),
        )
    }

    fn forward(
        &self,
        params: &Params,
        buffers: &Params,
        x: &Array3<f64>,
        mode: BnMode,
    ) -> Result<(Array2<f64>, CrnnCache)> {
        self.check_input(x)?;
        self.check_params(params, buffers)?;
        let (n, m, t) = x.dim();
        let mut act = x
            .to_shape((n, 1, m, t))
            .map_err(|e| Error::Layout(e.to_string()))?
            .to_owned();
        let mut block_inputs = Vec::with_capacity(self.n_blocks());
        let mut bn = Vec::with_capacity(self.n_blocks());
        let mut pools = Vec::with_capacity(self.n_blocks());
        for b in 0..self.n_blocks() {
            let p = &params.0[b * PER_BLOCK..];
            let w = p[0].view().into_dimensionality::<Ix4>().expect("conv weight");
            let conv = conv3x3_forward(&act, w, view1(&p[1]));
            let (y, cache) = bn_relu_forward(
                &conv,
                view1(&p[2]),
                view1(&p[3]),
                view1(&buffers.0[2 * b]),
                view1(&buffers.0[2 * b + 1]),
                mode,
            );
            let (pooled, pc) = maxpool2_forward(&y);
            block_inputs.push(std::mem::replace(&mut act, pooled));
            bn.push(cache);
            pools.push(pc);
        }
        // time-major sequence: step t sees every (channel, mel) cell of column t
        let pooled_dim = act.dim();
        let (_, c, h, w) = pooled_dim;
        let seq = act
            .permuted_axes([3, 0, 1, 2])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((w, n, c * h))
            .expect("contiguous sequence");
        let (hs, gru) = gru_forward(&seq, &self.gru_params(params));
        let readout = match self.config.readout {
            Readout::LastHidden => hs.index_axis(Axis(0), w - 1).to_owned(),
            Readout::MeanHidden => hs.mean_axis(Axis(0)).expect("non-empty sequence"),
        };
        let o = self.gru_offset() + 4;
        let out = linear_forward(readout.view(), view2(&params.0[o]), view1(&params.0[o + 1]));
        Ok((
            out,
            CrnnCache {
                block_inputs,
                bn,
                pools,
                pooled_dim,
                gru,
                readout,
            },
        ))
    }

    fn backward(&self, params: &Params, cache: &CrnnCache, d_out: &Array2<f64>) -> Params {
        let o = self.gru_offset();
        let (d_read, dw_head, db_head) = linear_backward(cache.readout.view(), view2(&params.0[o + 4]), d_out.view());
        let (n, c, h, w) = cache.pooled_dim;
        let hd = self.config.rnn_hidden;
        let mut dhs = Array3::<f64>::zeros((w, n, hd));
        match self.config.readout {
            Readout::LastHidden => dhs.index_axis_mut(Axis(0), w - 1).assign(&d_read),
            Readout::MeanHidden => {
                let share = &d_read / w as f64;
                for mut step in dhs.axis_iter_mut(Axis(0)) {
                    step.assign(&share);
                }
            }
        }
        let gp = self.gru_params(params);
        let gg = gru_backward(&dhs, &cache.gru, &gp);
        let mut d_act = gg
            .dx
            .into_shape_with_order((w, n, c, h))
            .expect("sequence shape")
            .permuted_axes([1, 2, 3, 0])
            .as_standard_layout()
            .into_owned();

        let mut grads: Vec<ArrayD<f64>> = vec![ArrayD::zeros(IxDyn(&[0])); params.len()];
        for b in (0..self.n_blocks()).rev() {
            let p = &params.0[b * PER_BLOCK..];
            let dy = maxpool2_backward(&d_act, &cache.pools[b]);
            let bg = bn_relu_backward(&dy, &cache.bn[b], view1(&p[2]), view1(&p[3]));
            let w4 = p[0].view().into_dimensionality::<Ix4>().expect("conv weight");
            let cg = conv3x3_backward(&cache.block_inputs[b], w4, &bg.dx, b > 0);
            grads[b * PER_BLOCK] = cg.dw.into_dyn();
            grads[b * PER_BLOCK + 1] = cg.db.into_dyn();
            grads[b * PER_BLOCK + 2] = bg.dgamma.into_dyn();
            grads[b * PER_BLOCK + 3] = bg.dbeta.into_dyn();
            if let Some(dx) = cg.dx {
                d_act = dx;
            }
        }
        grads[o] = gg.dw_ih.into_dyn();
        grads[o + 1] = gg.dw_hh.into_dyn();
        grads[o + 2] = gg.db_ih.into_dyn();
        grads[o + 3] = gg.db_hh.into_dyn();
        grads[o + 4] = dw_head.into_dyn();
        grads[o + 5] = db_head.into_dyn();
        Params(grads)
    }

    /// Exponential moving average with momentum; the variance uses the
    /// unbiased batch estimate.
    fn updated_buffers(&self, buffers: &Params, cache: &CrnnCache) -> Params {
        let mom = self.config.bn_momentum;
        let mut out = buffers.clone();
        for (b, bc) in cache.bn.iter().enumerate() {
            if bc.mode != BnMode::Batch {
                continue;
            }
            let (n, _, h, w) = bc.xhat.dim();
            let m = (n * h * w) as f64;
            let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            let mean: &Array1<f64> = &bc.batch_mean;
            out.0[2 * b].zip_mut_with(&mean.view().into_dyn(), |r, &v| *r = (1.0 - mom) * *r + mom * v);
            out.0[2 * b + 1].zip_mut_with(&bc.batch_var.view().into_dyn(), |r, &v| {
                *r = (1.0 - mom) * *r + mom * v * unbias
            });
        }
        out
    }
}
