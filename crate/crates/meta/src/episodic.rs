//! Episodic losses for the metric learners. Support and query go through the
//! encoder as one batch so normalisation statistics span the whole episode.

use fsaudio_core::Episode;
use fsaudio_nn::{argmax_rows, cross_entropy, BnMode, Encoder, Params};
use ndarray::{concatenate, s, Array2, Axis};

use crate::error::{Error, Result};
use crate::learner::{episode_input, Model};
use crate::metric::{
    cosine, neg_sq_euclidean, neg_sq_euclidean_backward, prototypes, prototypes_backward, scaled_cosine_backward,
};

/// How query features are scored against class prototypes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricHead {
    /// Negative squared Euclidean distance.
    SqEuclidean,
    /// `s * cos(q, c)` with a learnable scale.
    ScaledCosine(f64),
}

#[derive(Debug, Clone)]
pub struct EpisodeStep {
    pub loss: f64,
    pub accuracy: f64,
    pub grad: Params,
    /// Gradient of the loss with respect to the cosine scale; zero otherwise.
    pub scale_grad: f64,
    /// Running statistics after folding in this episode's batch.
    pub buffers: Params,
}

/// Episode logits from a batch of features laid out support-first.
pub fn episode_logits(
    features: &Array2<f64>,
    s_labels: &[usize],
    n_way: usize,
    head: MetricHead,
) -> Result<Array2<f64>> {
    let ns = s_labels.len();
    let (sf, qf) = (features.slice(s![..ns, ..]), features.slice(s![ns.., ..]));
    let c = prototypes(sf, s_labels, n_way)?;
    Ok(match head {
        MetricHead::SqEuclidean => neg_sq_euclidean(qf, c.view()),
        MetricHead::ScaledCosine(scale) => cosine(qf, c.view()) * scale,
    })
}

/// Loss, accuracy and gradients of one episode at `params`.
pub fn metric_episode_step<E: Encoder>(
    model: &Model<E>,
    params: &Params,
    episode: &Episode,
    head: MetricHead,
) -> Result<EpisodeStep> {
    let (x, s_labels, q_labels) = episode_input(episode)?;
    let n = episode.spec().n_way;
    let ns = s_labels.len();
    let (f, cache) = model.forward(params, &x, BnMode::Batch)?;
    let logits = episode_logits(&f, &s_labels, n, head)?;
    let out = cross_entropy(logits.view(), &q_labels, None).map_err(|_| Error::NonFinite {
        context: "episode loss".into(),
    })?;

    let (sf, qf) = (f.slice(s![..ns, ..]), f.slice(s![ns.., ..]));
    let c = prototypes(sf, &s_labels, n)?;
    let (dq, dc, ds) = match head {
        MetricHead::SqEuclidean => {
            let (dq, dc) = neg_sq_euclidean_backward(qf, c.view(), out.grad.view());
            (dq, dc, 0.0)
        }
        MetricHead::ScaledCosine(scale) => scaled_cosine_backward(qf, c.view(), scale, out.grad.view()),
    };
    let dsf = prototypes_backward(dc.view(), &s_labels);
    let df = concatenate(Axis(0), &[dsf.view(), dq.view()]).expect("matching feature widths");
    let grad = model.encoder.backward(params, &cache, &df);
    Ok(EpisodeStep {
        loss: out.loss,
        accuracy: out.accuracy(),
        grad,
        scale_grad: ds,
        buffers: model.encoder.updated_buffers(&model.buffers, &cache),
    })
}

/// Prototypical-network loss and accuracy on one episode.
pub fn protonet_episode<E: Encoder>(model: &Model<E>, episode: &Episode) -> Result<(f64, f64)> {
    let step = metric_episode_step(model, &model.params, episode, MetricHead::SqEuclidean)?;
    Ok((step.loss, step.accuracy))
}

/// Predictions of a metric head from already computed features.
pub fn metric_predict(
    features: &Array2<f64>,
    s_labels: &[usize],
    n_way: usize,
    head: MetricHead,
) -> Result<Vec<usize>> {
    Ok(argmax_rows(episode_logits(features, s_labels, n_way, head)?.view()))
}
