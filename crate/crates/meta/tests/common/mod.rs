#![allow(dead_code)]

use std::sync::Arc;

use fsaudio_core::rng::task_rng;
use fsaudio_core::sampler::ClassPool;
use fsaudio_core::store::SpectrogramStore;
use fsaudio_core::{Episode, EpisodeItem, EpisodeSpec, Spectrogram};
use fsaudio_meta::Model;
use fsaudio_nn::{LinearEncoder, Params};
use ndarray::{Array2, ArrayD, IxDyn};
use rand::Rng;

/// Store whose classes are fixed random patterns plus uniform noise.
pub fn toy_store(
    dataset: &str,
    n_classes: usize,
    clips: usize,
    shape: (usize, usize),
    noise: f64,
    seed: u64,
) -> (SpectrogramStore, ClassPool) {
    let mut store = SpectrogramStore::new();
    let mut counts = Vec::new();
    let labels: Vec<String> = (0..n_classes).map(|c| format!("c{c:02}")).collect();
    for (c, label) in labels.iter().enumerate() {
        let mut rng = task_rng(seed, c as u64);
        let pattern = Array2::<f64>::from_shape_simple_fn(shape, || rng.gen_range(-1.0..1.0));
        for i in 0..clips {
            let mut rng = task_rng(seed ^ 0xabc, (c * 10_000 + i) as u64);
            let s = pattern.mapv(|v| (v + noise * rng.gen_range(-1.0..1.0)) as f32);
            store
                .insert_clip(dataset, &format!("{label}/{i}"), label, vec![Spectrogram(s)])
                .unwrap();
        }
        counts.push((label.as_str(), clips, 1));
    }
    (store, ClassPool::from_counts(dataset, &counts))
}

/// Linear encoder over `1 x d` inputs whose weights are the identity.
pub fn identity_model(d: usize) -> Model<LinearEncoder> {
    let encoder = LinearEncoder::new(1, d, d);
    let params = Params(vec![Array2::<f64>::eye(d).into_dyn(), ArrayD::zeros(IxDyn(&[d]))]);
    Model {
        encoder,
        params,
        buffers: Params::default(),
    }
}

pub fn item(values: &[f64], class_index: usize, clip: &str) -> EpisodeItem {
    let s = Array2::from_shape_vec((1, values.len()), values.iter().map(|&v| v as f32).collect()).unwrap();
    EpisodeItem {
        spectrogram: Arc::new(Spectrogram(s)),
        class_index,
        dataset_id: "toy".into(),
        parent_clip_id: clip.into(),
        subclip_index: 0,
    }
}

/// Episode from explicit `1 x d` support and query vectors.
pub fn vector_episode(n_way: usize, support: &[(Vec<f64>, usize)], query: &[(Vec<f64>, usize)]) -> Episode {
    let k = support.len() / n_way;
    let q = query.len() / n_way;
    let s = support
        .iter()
        .enumerate()
        .map(|(i, (v, c))| item(v, *c, &format!("s{i}")))
        .collect();
    let qq = query
        .iter()
        .enumerate()
        .map(|(i, (v, c))| item(v, *c, &format!("q{i}")))
        .collect();
    Episode::new(
        EpisodeSpec::new(n_way, k, q).unwrap(),
        s,
        qq,
        (0..n_way).map(|c| format!("class{c}")).collect(),
    )
    .unwrap()
}

/// Random well-formed episode of `1 x d` vectors, classes around random centres.
pub fn random_vector_episode(n_way: usize, k: usize, q: usize, d: usize, seed: u64) -> Episode {
    let mut rng = task_rng(seed, 0);
    let centres: Vec<Vec<f64>> = (0..n_way)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut draw = |c: usize| -> Vec<f64> { centres[c].iter().map(|v| v + rng.gen_range(-0.8..0.8)).collect() };
    let support: Vec<(Vec<f64>, usize)> = (0..n_way)
        .flat_map(|c| (0..k).map(move |_| c))
        .map(|c| (draw(c), c))
        .collect();
    let query: Vec<(Vec<f64>, usize)> = (0..n_way)
        .flat_map(|c| (0..q).map(move |_| c))
        .map(|c| (draw(c), c))
        .collect();
    vector_episode(n_way, &support, &query)
}
