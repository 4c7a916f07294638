//! First-order MAML and first-order Meta-Curvature.
//!
//! Adaptation runs plain gradient descent on the support cross-entropy with
//! batch-statistics normalisation. The meta-gradient is the query-loss
//! gradient at the adapted parameters, applied to the initial ones.

use fsaudio_core::Episode;
use fsaudio_nn::{cross_entropy, Adam, BnMode, Encoder, Params};
use ndarray::{linalg::general_mat_mul, Array2, ArrayD, IxDyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{items_input, Model};

pub const MC_VARIANT: &str = "per_tensor_scale+output_matrix";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InnerLoop {
    pub steps: usize,
    pub lr: f64,
}

impl Default for InnerLoop {
    fn default() -> Self {
        InnerLoop { steps: 5, lr: 0.01 }
    }
}

/// Learnable inner-gradient transform: an elementwise scale per tensor and,
/// for tensors with two or more axes, a left matrix over the output axis.
///
/// `mats[i]` is `[out, out]` for such tensors and an empty `[0, 0]`
/// placeholder otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaCurvature {
    pub scales: Params,
    pub mats: Params,
}

fn has_matrix(t: &ArrayD<f64>) -> bool {
    t.ndim() >= 2
}

fn as_matrix(t: &ArrayD<f64>) -> Array2<f64> {
    let out = t.shape()[0];
    let rest = t.len() / out.max(1);
    t.as_standard_layout()
        .into_owned()
        .into_shape_with_order((out, rest))
        .expect("contiguous tensor")
}

impl MetaCurvature {
    /// Identity transform shaped for `params`.
    pub fn identity(params: &Params) -> Self {
        let scales = Params(params.0.iter().map(|t| ArrayD::ones(t.raw_dim())).collect());
        let mats = Params(
            params
                .0
                .iter()
                .map(|t| {
                    if has_matrix(t) {
                        Array2::<f64>::eye(t.shape()[0]).into_dyn()
                    } else {
                        ArrayD::zeros(IxDyn(&[0, 0]))
                    }
                })
                .collect(),
        );
        MetaCurvature { scales, mats }
    }

    pub fn check(&self, params: &Params) -> Result<()> {
        self.scales.check_compatible(params)?;
        if self.mats.len() != params.len() {
            return Err(Error::invalid("one output matrix slot per parameter tensor required"));
        }
        for (m, p) in self.mats.0.iter().zip(&params.0) {
            let want = if has_matrix(p) { p.shape()[0] } else { 0 };
            if m.shape() != [want, want] {
                return Err(Error::invalid(format!(
                    "output matrix {:?} does not fit tensor {:?}",
                    m.shape(),
                    p.shape()
                )));
            }
        }
        Ok(())
    }

    /// `M (S ⊙ g)` per tensor.
    pub fn transform(&self, grads: &Params) -> Result<Params> {
        self.check(grads)?;
        let out = grads
            .0
            .iter()
            .zip(&self.scales.0)
            .zip(&self.mats.0)
            .map(|((g, s), m)| {
                let sg = g * s;
                if !has_matrix(g) {
                    return sg;
                }
                let x = as_matrix(&sg);
                let m2 = m.view().into_dimensionality::<ndarray::Ix2>().expect("square matrix");
                let mut y = Array2::<f64>::zeros(x.raw_dim());
                general_mat_mul(1.0, &m2, &x, 0.0, &mut y);
                y.into_shape_with_order(g.raw_dim()).expect("same element count")
            })
            .collect();
        Ok(Params(out))
    }

    pub fn as_params(&self) -> Params {
        self.scales.clone().concat(self.mats.clone())
    }

    pub fn from_params(p: Params) -> Self {
        let n = p.len() / 2;
        let (scales, mats) = p.split_at(n);
        MetaCurvature { scales, mats }
    }

    /// First-order gradients of the query loss with respect to the
    /// transform, given the query gradient at the adapted parameters and the
    /// support gradients of every inner step.
    pub fn meta_gradient(&self, query_grad: &Params, support_grads: &[Params], inner_lr: f64) -> MetaCurvature {
        let mut d_scales = query_grad.zeros_like();
        let mut d_mats = self.mats.zeros_like();
        for (i, gq) in query_grad.0.iter().enumerate() {
            let s = &self.scales.0[i];
            if has_matrix(gq) {
                let gq2 = as_matrix(gq);
                let m = self.mats.0[i]
                    .view()
                    .into_dimensionality::<ndarray::Ix2>()
                    .expect("square matrix");
                let mt_gq = m.t().dot(&gq2);
                let mut dm = d_mats.0[i]
                    .view_mut()
                    .into_dimensionality::<ndarray::Ix2>()
                    .expect("square matrix");
                for gt in support_grads {
                    let g = &gt.0[i];
                    let sg = as_matrix(&(g * s));
                    // dM += -lr * Gq (S ⊙ g)ᵀ
                    general_mat_mul(-inner_lr, &gq2, &sg.t(), 1.0, &mut dm);
                    // dS += -lr * (Mᵀ Gq) ⊙ g
                    let contrib = mt_gq
                        .view()
                        .into_shape_with_order(g.raw_dim())
                        .expect("same element count");
                    ndarray::Zip::from(&mut d_scales.0[i])
                        .and(&contrib)
                        .and(g)
                        .for_each(|d, &a, &b| *d -= inner_lr * a * b);
                }
            } else {
                for gt in support_grads {
                    ndarray::Zip::from(&mut d_scales.0[i])
                        .and(gq)
                        .and(&gt.0[i])
                        .for_each(|d, &a, &b| *d -= inner_lr * a * b);
                }
            }
        }
        MetaCurvature {
            scales: d_scales,
            mats: d_mats,
        }
    }
}

pub struct Adapted {
    pub params: Params,
    /// Support gradient at each inner step, before any transform.
    pub support_grads: Vec<Params>,
    pub support_losses: Vec<f64>,
}

/// Inner-loop adaptation on a support batch. The input parameters are not touched.
pub fn adapt<E: Encoder>(
    model: &Model<E>,
    support: &ndarray::Array3<f64>,
    labels: &[usize],
    inner: InnerLoop,
    transforms: Option<&MetaCurvature>,
) -> Result<Adapted> {
    let mut params = model.params.clone();
    let mut support_grads = Vec::with_capacity(inner.steps);
    let mut support_losses = Vec::with_capacity(inner.steps);
    for step in 0..inner.steps {
        let (logits, cache) = model.forward(&params, support, BnMode::Batch)?;
        let out = cross_entropy(logits.view(), labels, None).map_err(|_| Error::NonFinite {
            context: format!("inner step {step} (support loss)"),
        })?;
        let g = model.encoder.backward(&params, &cache, &out.grad);
        match transforms {
            Some(t) => params.axpy(-inner.lr, &t.transform(&g)?),
            None => params.axpy(-inner.lr, &g),
        }
        support_losses.push(out.loss);
        support_grads.push(g);
    }
    Ok(Adapted {
        params,
        support_grads,
        support_losses,
    })
}

pub struct MetaGradient {
    pub params: Params,
    pub transforms: Option<MetaCurvature>,
    pub query_loss: f64,
    pub query_accuracy: f64,
}

/// Adapts on the support set, then differentiates the query loss at the
/// adapted parameters.
pub fn meta_gradient<E: Encoder>(
    model: &Model<E>,
    episode: &Episode,
    inner: InnerLoop,
    transforms: Option<&MetaCurvature>,
) -> Result<MetaGradient> {
    let support = items_input(episode.support())?;
    let adapted = adapt(model, &support, &episode.support_labels(), inner, transforms)?;
    let query = items_input(episode.query())?;
    let (logits, cache) = model.forward(&adapted.params, &query, BnMode::Batch)?;
    let out = cross_entropy(logits.view(), &episode.query_labels(), None).map_err(|_| Error::NonFinite {
        context: "query loss after adaptation".into(),
    })?;
    let g = model.encoder.backward(&adapted.params, &cache, &out.grad);
    let t_grad = transforms.map(|t| t.meta_gradient(&g, &adapted.support_grads, inner.lr));
    Ok(MetaGradient {
        params: g,
        transforms: t_grad,
        query_loss: out.loss,
        query_accuracy: out.accuracy(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaStepStats {
    pub loss: f64,
    pub accuracy: f64,
}

/// Per-episode meta-gradients in parallel, averaged in episode order.
fn batch_gradients<E: Encoder>(
    model: &Model<E>,
    episodes: &[Episode],
    inner: InnerLoop,
    transforms: Option<&MetaCurvature>,
) -> Result<(Params, Option<Params>, MetaStepStats)> {
    if episodes.is_empty() {
        return Err(Error::invalid("empty meta-batch"));
    }
    let spec = episodes[0].spec();
    if episodes.iter().any(|e| e.spec() != spec) {
        return Err(Error::invalid("episodes in a meta-batch must share their spec"));
    }
    let grads: Vec<MetaGradient> = episodes
        .par_iter()
        .map(|e| meta_gradient(model, e, inner, transforms))
        .collect::<Result<_>>()?;
    let n = grads.len() as f64;
    let stats = MetaStepStats {
        loss: grads.iter().map(|g| g.query_loss).sum::<f64>() / n,
        accuracy: grads.iter().map(|g| g.query_accuracy).sum::<f64>() / n,
    };
    let theta: Vec<Params> = grads.iter().map(|g| g.params.clone()).collect();
    let mean = Params::mean(&theta).expect("non-empty batch");
    let t_mean = transforms.map(|_| {
        let ts: Vec<Params> = grads
            .iter()
            .map(|g| g.transforms.as_ref().expect("transform gradient").as_params())
            .collect();
        Params::mean(&ts).expect("non-empty batch")
    });
    Ok((mean, t_mean, stats))
}

/// One outer update of the initialisation with Adam.
pub fn fomaml_meta_step<E: Encoder>(
    model: &mut Model<E>,
    episodes: &[Episode],
    inner: InnerLoop,
    opt: &mut Adam,
) -> Result<MetaStepStats> {
    let (g, _, stats) = batch_gradients(model, episodes, inner, None)?;
    opt.update(&mut model.params, &g);
    Ok(stats)
}

/// One outer update of the initialisation and, when an optimiser is given
/// for them, of the transforms.
pub fn metacurvature_meta_step<E: Encoder>(
    model: &mut Model<E>,
    transforms: &mut MetaCurvature,
    episodes: &[Episode],
    inner: InnerLoop,
    opt: &mut Adam,
    transform_opt: Option<&mut Adam>,
) -> Result<MetaStepStats> {
    let (g, tg, stats) = batch_gradients(model, episodes, inner, Some(transforms))?;
    opt.update(&mut model.params, &g);
    if let Some(topt) = transform_opt {
        let mut tp = transforms.as_params();
        topt.update(&mut tp, &tg.expect("transform gradient"));
        *transforms = MetaCurvature::from_params(tp);
    }
    Ok(stats)
}
