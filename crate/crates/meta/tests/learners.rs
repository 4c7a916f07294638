mod common;

use std::collections::BTreeMap;

use common::{identity_model, random_vector_episode, toy_store, vector_episode};
use fsaudio_core::rng::{seeded, task_rng};
use fsaudio_core::sampler::{EpisodeSampler, SamplerMode};
use fsaudio_core::EpisodeSpec;
use fsaudio_meta::episodic::{metric_episode_step, MetricHead};
use fsaudio_meta::learner::{items_input, EpisodeClassifier};
use fsaudio_meta::maml::{adapt, meta_gradient, InnerLoop, MetaCurvature};
use fsaudio_meta::metric::FeatureNorm;
use fsaudio_meta::{
    conventional_train, feature_mean, fomaml_meta_step, inverse_frequency, inverse_frequency_weights, protonet_episode,
    train, Algorithm, ConventionalConfig, LabelledSet, Learner, LearnerKind, Model, TrainConfig, TrainData,
};
use fsaudio_nn::{cross_entropy, Adam, BnMode, Crnn, CrnnConfig, Encoder, Head, LinearEncoder, Params};
use ndarray::{array, ArrayD, IxDyn};

fn tiny_crnn(head: Head) -> Crnn {
    Crnn::new(CrnnConfig {
        conv_channels: vec![3, 4],
        rnn_hidden: 5,
        head,
        input_mels: 8,
        input_frames: 12,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn protonet_two_way_hand_fixture() {
    let ep = vector_episode(
        2,
        &[(vec![0.0, 0.0], 0), (vec![4.0, 0.0], 1)],
        &[(vec![1.0, 0.0], 0), (vec![3.5, 0.0], 1)],
    );
    let learner = Learner::new(identity_model(2), LearnerKind::Protonet);
    assert_eq!(learner.predict(&ep, &mut seeded(0)).unwrap(), vec![0, 1]);
    // query on top of a support point
    let ep = vector_episode(
        2,
        &[(vec![0.0, 1.0], 0), (vec![2.0, -1.0], 1)],
        &[(vec![0.0, 1.0], 0), (vec![2.0, -1.0], 1)],
    );
    assert_eq!(learner.predict(&ep, &mut seeded(0)).unwrap(), vec![0, 1]);
    let (loss, acc) = protonet_episode(&learner.model, &ep).unwrap();
    assert_eq!(acc, 1.0);
    // distances 0 and 8 to the two prototypes: loss = ln(1 + e^-8)
    assert!((loss - (1.0 + (-8.0f64).exp()).ln()).abs() < 1e-12);
}

/// Brute-force nearest centroid, written without the library helpers.
fn oracle(ep: &fsaudio_core::Episode, centre: Option<&[f64]>, l2: bool) -> Vec<usize> {
    let n = ep.spec().n_way;
    let feat = |it: &fsaudio_core::EpisodeItem| -> Vec<f64> {
        let mut v: Vec<f64> = it.spectrogram.0.iter().map(|&x| x as f64).collect();
        if let Some(c) = centre {
            for (a, b) in v.iter_mut().zip(c) {
                *a -= b;
            }
        }
        if l2 {
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            v.iter_mut().for_each(|a| *a /= norm);
        }
        v
    };
    let d = ep.input_shape().1;
    let mut centroids = vec![vec![0.0; d]; n];
    let mut counts = vec![0.0; n];
    for it in ep.support() {
        for (a, b) in centroids[it.class_index].iter_mut().zip(feat(it)) {
            *a += b;
        }
        counts[it.class_index] += 1.0;
    }
    for (c, k) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|a| *a /= k);
    }
    ep.query()
        .iter()
        .map(|it| {
            let f = feat(it);
            let dist: Vec<f64> = centroids
                .iter()
                .map(|c| c.iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect();
            (0..n).fold(0, |best, j| if dist[j] < dist[best] { j } else { best })
        })
        .collect()
}

#[test]
fn metric_learners_match_brute_force_oracle() {
    let d = 6;
    let mean: Vec<f64> = (0..d).map(|i| 0.1 * i as f64 - 0.2).collect();
    let proto = Learner::new(identity_model(d), LearnerKind::Protonet);
    let plain = Learner::new(
        identity_model(d),
        LearnerKind::Simpleshot {
            norm: FeatureNorm::Un,
            train_mean: vec![0.0; d],
        },
    );
    let cl2n = Learner::new(
        identity_model(d),
        LearnerKind::Simpleshot {
            norm: FeatureNorm::Cl2n,
            train_mean: mean.clone(),
        },
    );
    for seed in 0..100 {
        let ep = random_vector_episode(5, 1 + (seed as usize % 3), 3, d, seed);
        let mut rng = seeded(0);
        let p = proto.predict(&ep, &mut rng).unwrap();
        assert_eq!(p, oracle(&ep, None, false), "protonet fixture {seed}");
        assert_eq!(
            plain.predict(&ep, &mut rng).unwrap(),
            p,
            "uncentred simpleshot fixture {seed}"
        );
        assert_eq!(
            cl2n.predict(&ep, &mut rng).unwrap(),
            oracle(&ep, Some(&mean), true),
            "cl2n fixture {seed}"
        );
    }
}

#[test]
fn simpleshot_cl2n_hand_fixture() {
    let ep = vector_episode(
        2,
        &[(vec![2.0, 0.0], 0), (vec![1.0, 1.0], 1)],
        &[(vec![1.9, 0.1], 0), (vec![1.0, 2.0], 1)],
    );
    let learner = Learner::new(
        identity_model(2),
        LearnerKind::Simpleshot {
            norm: FeatureNorm::Cl2n,
            train_mean: vec![1.0, 0.0],
        },
    );
    assert_eq!(learner.predict(&ep, &mut seeded(0)).unwrap(), vec![0, 1]);
}

fn two_point_support() -> (ndarray::Array3<f64>, Vec<usize>) {
    (array![[[1.0, 0.0]], [[0.0, 1.0]]], vec![0, 1])
}

fn zero_linear() -> Model<LinearEncoder> {
    Model {
        encoder: LinearEncoder::new(1, 2, 2),
        params: Params(vec![ArrayD::zeros(IxDyn(&[2, 2])), ArrayD::zeros(IxDyn(&[2]))]),
        buffers: Params::default(),
    }
}

#[test]
fn adaptation_identities() {
    let model = Model::init(LinearEncoder::new(1, 2, 2), 3);
    let (x, y) = two_point_support();
    let none = adapt(&model, &x, &y, InnerLoop { steps: 0, lr: 0.5 }, None).unwrap();
    assert_eq!(none.params, model.params);
    let frozen = adapt(&model, &x, &y, InnerLoop { steps: 4, lr: 0.0 }, None).unwrap();
    assert_eq!(frozen.params, model.params);
}

#[test]
fn one_inner_step_matches_closed_form() {
    // Zero weights give p = 1/2 for both classes, so the mean-CE logit
    // gradient is (p - onehot)/2 per row and dW = dyᵀ x.
    let model = zero_linear();
    let (x, y) = two_point_support();
    let lr = 0.1;
    let out = adapt(&model, &x, &y, InnerLoop { steps: 1, lr }, None).unwrap();
    let expect_w = array![[0.025, -0.025], [-0.025, 0.025]];
    let w = out.params.0[0].view().into_dimensionality::<ndarray::Ix2>().unwrap();
    assert!(w.iter().zip(expect_w.iter()).all(|(a, b)| (a - b).abs() < 1e-15), "{w}");
    assert!(out.params.0[1].iter().all(|&b| b == 0.0));
    assert_eq!(model.params, zero_linear().params, "meta-parameters untouched");

    // doubled scales double the step
    let mut mc = MetaCurvature::identity(&model.params);
    mc.scales.scale(2.0);
    let doubled = adapt(&model, &x, &y, InnerLoop { steps: 1, lr }, Some(&mc)).unwrap();
    let w2 = doubled.params.0[0]
        .view()
        .into_dimensionality::<ndarray::Ix2>()
        .unwrap();
    assert!(w2.iter().zip(expect_w.iter()).all(|(a, b)| (a - 2.0 * b).abs() < 1e-15));

    // a zero output matrix freezes the weight tensor
    let mut frozen = MetaCurvature::identity(&model.params);
    frozen.mats.0[0].fill(0.0);
    let f = adapt(&model, &x, &y, InnerLoop { steps: 3, lr }, Some(&frozen)).unwrap();
    assert_eq!(f.params.0[0], model.params.0[0]);
}

#[test]
fn identity_transform_is_exact() {
    let model = Model::init(tiny_crnn(Head::NWay(3)), 1);
    let mc = MetaCurvature::identity(&model.params);
    let g = model.encoder.init_params(9);
    assert_eq!(mc.transform(&g).unwrap(), g);
    let bad = Params(vec![ArrayD::zeros(IxDyn(&[2]))]);
    assert!(mc.transform(&bad).is_err());
    let back = MetaCurvature::from_params(mc.as_params());
    assert_eq!(back, mc);
}

fn crnn_episode(seed: u64) -> (fsaudio_core::store::SpectrogramStore, EpisodeSampler) {
    let (store, pool) = toy_store("toy", 4, 6, (8, 12), 0.3, seed);
    let sampler = EpisodeSampler::new(SamplerMode::Single, EpisodeSpec::new(3, 2, 2).unwrap(), vec![pool]).unwrap();
    (store, sampler)
}

#[test]
fn meta_gradient_is_query_gradient_at_adapted_parameters() {
    let model = Model::init(tiny_crnn(Head::NWay(3)), 5);
    let (store, sampler) = crnn_episode(2);
    let ep = sampler.sample(&store, &mut task_rng(7, 0)).unwrap();
    let inner = InnerLoop { steps: 3, lr: 0.05 };
    let mg = meta_gradient(&model, &ep, inner, None).unwrap();

    let support = items_input(ep.support()).unwrap();
    let adapted = adapt(&model, &support, &ep.support_labels(), inner, None).unwrap();
    let query = items_input(ep.query()).unwrap();
    let loss_at = |p: &Params| {
        let (y, _) = model.forward(p, &query, BnMode::Batch).unwrap();
        cross_entropy(y.view(), &ep.query_labels(), None).unwrap().loss
    };
    let (y, cache) = model.forward(&adapted.params, &query, BnMode::Batch).unwrap();
    let out = cross_entropy(y.view(), &ep.query_labels(), None).unwrap();
    let direct = model.encoder.backward(&adapted.params, &cache, &out.grad);
    assert_eq!(mg.params, direct);
    assert_eq!(mg.query_loss, out.loss);

    // independent oracle: central differences of the query loss around θ'
    let flat = adapted.params.flatten();
    let g = mg.params.flatten();
    let h = 1e-5;
    let n = flat.len();
    for i in [0, n / 7, n / 3, n / 2, n - 9, n - 1] {
        let mut plus = adapted.params.clone();
        let mut minus = adapted.params.clone();
        let mut v = flat.clone();
        v[i] += h;
        plus.assign_flat(&v).unwrap();
        v[i] -= 2.0 * h;
        minus.assign_flat(&v).unwrap();
        let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
        let scale = fd.abs().max(g[i].abs());
        assert!(
            scale < 1e-8 || (fd - g[i]).abs() / scale < 1e-3,
            "coordinate {i}: fd {fd}, analytic {}",
            g[i]
        );
    }
}

#[test]
fn zero_inner_steps_reduce_to_query_training() {
    let model = Model::init(tiny_crnn(Head::NWay(3)), 6);
    let (store, sampler) = crnn_episode(3);
    let ep = sampler.sample(&store, &mut task_rng(1, 0)).unwrap();
    let mg = meta_gradient(&model, &ep, InnerLoop { steps: 0, lr: 0.01 }, None).unwrap();
    let query = items_input(ep.query()).unwrap();
    let (y, cache) = model.forward(&model.params, &query, BnMode::Batch).unwrap();
    let out = cross_entropy(y.view(), &ep.query_labels(), None).unwrap();
    assert_eq!(mg.params, model.encoder.backward(&model.params, &cache, &out.grad));
}

#[test]
fn duplicated_episode_batch_matches_single() {
    let (store, sampler) = crnn_episode(4);
    let ep = sampler.sample(&store, &mut task_rng(2, 0)).unwrap();
    let inner = InnerLoop::default();
    let mut one = Model::init(tiny_crnn(Head::NWay(3)), 8);
    let mut two = one.clone();
    let mut opt1 = Adam::new(1e-3, &one.params);
    let mut opt2 = Adam::new(1e-3, &two.params);
    fomaml_meta_step(&mut one, std::slice::from_ref(&ep), inner, &mut opt1).unwrap();
    fomaml_meta_step(&mut two, &[ep.clone(), ep], inner, &mut opt2).unwrap();
    assert_eq!(one.params, two.params);
    assert!(fomaml_meta_step(&mut one, &[], inner, &mut opt1).is_err());
}

#[test]
fn identity_metacurvature_reproduces_fomaml_bit_for_bit() {
    let (store, sampler) = crnn_episode(5);
    let base = TrainConfig {
        steps: 6,
        meta_batch: 2,
        inner: InnerLoop { steps: 2, lr: 0.05 },
        learn_transforms: false,
        seed: 11,
        ..Default::default()
    };
    let data = TrainData {
        store: &store,
        train: &sampler,
        val: None,
    };
    let model = Model::init(tiny_crnn(Head::NWay(3)), 4);
    let maml = train(
        model.clone(),
        &data,
        &TrainConfig {
            algorithm: Algorithm::FoMaml,
            ..base.clone()
        },
    )
    .unwrap();
    let mc = train(
        model,
        &data,
        &TrainConfig {
            algorithm: Algorithm::FoMetaCurvature,
            ..base
        },
    )
    .unwrap();
    let bits = |p: &Params| p.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&maml.learner.model.params), bits(&mc.learner.model.params));
    for (a, b) in maml.log.iter().zip(&mc.log) {
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    }
}

#[test]
fn learned_transforms_move() {
    let (store, sampler) = crnn_episode(6);
    let data = TrainData {
        store: &store,
        train: &sampler,
        val: None,
    };
    let cfg = TrainConfig {
        algorithm: Algorithm::FoMetaCurvature,
        steps: 3,
        meta_batch: 2,
        inner: InnerLoop { steps: 2, lr: 0.05 },
        ..Default::default()
    };
    let model = Model::init(tiny_crnn(Head::NWay(3)), 4);
    let out = train(model.clone(), &data, &cfg).unwrap();
    let LearnerKind::FoMetaCurvature {
        transforms, variant, ..
    } = &out.learner.kind
    else {
        panic!("wrong kind");
    };
    assert_ne!(transforms, &MetaCurvature::identity(&model.params));
    assert!(transforms.check(&model.params).is_ok());
    assert!(!variant.is_empty());
}

#[test]
fn inverse_frequency_examples() {
    let w = inverse_frequency_weights(&BTreeMap::from([("A".to_string(), 10), ("B".to_string(), 40)])).unwrap();
    assert!((w["A"] - 1.6).abs() < 1e-12 && (w["B"] - 0.4).abs() < 1e-12);
    assert_eq!(inverse_frequency(&[100, 100]).unwrap(), vec![1.0, 1.0]);
    assert_eq!(inverse_frequency(&[7]).unwrap(), vec![1.0]);
    assert!(inverse_frequency(&[3, 0]).is_err());
}

fn separable_set() -> (fsaudio_core::store::SpectrogramStore, LabelledSet) {
    let mut store = fsaudio_core::store::SpectrogramStore::new();
    let mut rng = seeded(3);
    use rand::Rng;
    for (label, centre) in [("a", 1.5f64), ("b", -1.5)] {
        for i in 0..20 {
            // mirrored pairs keep the feature mean at exactly zero
            let jitter: f64 = if i % 2 == 0 { rng.gen_range(-0.5..0.5) } else { 0.0 };
            let v =
                ndarray::Array2::from_shape_vec((1, 2), vec![(centre + jitter) as f32, (jitter * 2.0) as f32]).unwrap();
            store
                .insert_clip(
                    "toy",
                    &format!("{label}/{i}"),
                    label,
                    vec![fsaudio_core::Spectrogram(v)],
                )
                .unwrap();
        }
    }
    let pool = fsaudio_core::sampler::ClassPool::from_counts("toy", &[("a", 20, 1), ("b", 20, 1)]);
    let set = LabelledSet::from_pools(&store, &[pool]).unwrap();
    (store, set)
}

#[test]
fn conventional_training_separates_toy_classes() {
    let (_store, set) = separable_set();
    let cfg = ConventionalConfig {
        epochs: 100,
        batch_size: 8,
        lr: 0.01,
        weighted: true,
    };
    let out = conventional_train(Model::init(LinearEncoder::new(1, 2, 3), 1), &set, cfg, 2).unwrap();
    assert_eq!(out.log.len(), 100);
    assert_eq!(out.log.last().unwrap().accuracy, 1.0);
    assert_eq!(out.train_mean.len(), 3);

    // balanced counts: weights are all one, so weighting changes nothing
    let unweighted = conventional_train(
        Model::init(LinearEncoder::new(1, 2, 3), 1),
        &set,
        ConventionalConfig { weighted: false, ..cfg },
        2,
    )
    .unwrap();
    assert_eq!(unweighted.model.params, out.model.params);
    assert_eq!(unweighted.head, out.head);
}

#[test]
fn feature_mean_of_centred_features_is_zero() {
    let mut store = fsaudio_core::store::SpectrogramStore::new();
    for (i, v) in [[1.0f32, 2.0], [-1.0, -2.0], [0.5, -3.0], [-0.5, 3.0]]
        .iter()
        .enumerate()
    {
        let s = ndarray::Array2::from_shape_vec((1, 2), v.to_vec()).unwrap();
        store
            .insert_clip("toy", &format!("a/{i}"), "a", vec![fsaudio_core::Spectrogram(s)])
            .unwrap();
    }
    let pool = fsaudio_core::sampler::ClassPool::from_counts("toy", &[("a", 4, 1)]);
    let set = LabelledSet::from_pools(&store, &[pool]).unwrap();
    let m = feature_mean(&identity_model(2), &set.items).unwrap();
    assert!(m.iter().all(|v| v.abs() < 1e-12), "{m:?}");
}

#[test]
fn metabaseline_zero_scale_and_scale_gradient() {
    let model = Model::init(tiny_crnn(Head::Embedding(6)), 2);
    let (store, sampler) = crnn_episode(7);
    let ep = sampler.sample(&store, &mut task_rng(3, 0)).unwrap();
    let at = |s: f64| metric_episode_step(&model, &model.params, &ep, MetricHead::ScaledCosine(s)).unwrap();
    assert!((at(0.0).loss - 3f64.ln()).abs() < 1e-12);

    for s in [0.5, 10.0] {
        let step = at(s);
        let h = 1e-5;
        let fd = (at(s + h).loss - at(s - h).loss) / (2.0 * h);
        let rel = (fd - step.scale_grad).abs() / fd.abs().max(step.scale_grad.abs());
        assert!(rel < 1e-3, "s={s}: fd {fd}, analytic {}", step.scale_grad);
    }

    // scaling every feature leaves the logits unchanged
    let f = ndarray::Array2::from_shape_fn((8, 4), |(i, j)| ((i * 3 + j) as f64).sin());
    let labels = [0, 1, 2];
    let a = fsaudio_meta::episodic::episode_logits(&f, &labels, 3, MetricHead::ScaledCosine(4.0)).unwrap();
    let b = fsaudio_meta::episodic::episode_logits(&(&f * 10.0), &labels, 3, MetricHead::ScaledCosine(4.0)).unwrap();
    assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-12));
}

#[test]
fn metabaseline_encoder_gradient_matches_finite_differences() {
    let model = Model::init(tiny_crnn(Head::Embedding(6)), 12);
    let (store, sampler) = crnn_episode(8);
    let ep = sampler.sample(&store, &mut task_rng(4, 0)).unwrap();
    let head = MetricHead::ScaledCosine(3.0);
    let step = metric_episode_step(&model, &model.params, &ep, head).unwrap();
    let flat = model.params.flatten();
    let g = step.grad.flatten();
    let h = 1e-5;
    for i in [1, flat.len() / 5, flat.len() / 2, flat.len() - 3] {
        let mut v = flat.clone();
        let mut p = model.params.clone();
        v[i] += h;
        p.assign_flat(&v).unwrap();
        let lp = metric_episode_step(&model, &p, &ep, head).unwrap().loss;
        v[i] -= 2.0 * h;
        p.assign_flat(&v).unwrap();
        let lm = metric_episode_step(&model, &p, &ep, head).unwrap().loss;
        let fd = (lp - lm) / (2.0 * h);
        let scale = fd.abs().max(g[i].abs());
        assert!(
            scale < 1e-8 || (fd - g[i]).abs() / scale < 1e-3,
            "coordinate {i}: fd {fd}, analytic {}",
            g[i]
        );
    }
}

fn zero_head(mut model: Model<Crnn>) -> Model<Crnn> {
    let n = model.params.len();
    model.params.0[n - 2].fill(0.0);
    model.params.0[n - 1].fill(0.0);
    model
}

#[test]
fn predictions_follow_label_permutations() {
    let (store, sampler) = crnn_episode(9);
    let perm = [2, 0, 1];
    let embed = Model::init(tiny_crnn(Head::Embedding(6)), 3);
    let d = embed.encoder.output_dim();
    // GBML learners are only symmetric in the labels when the head starts symmetric.
    let nway = zero_head(Model::init(tiny_crnn(Head::NWay(3)), 3));
    let learners: Vec<Box<dyn EpisodeClassifier>> = vec![
        Box::new(Learner::new(embed.clone(), LearnerKind::Protonet)),
        Box::new(Learner::new(
            embed.clone(),
            LearnerKind::Simpleshot {
                norm: FeatureNorm::Cl2n,
                train_mean: vec![0.1; d],
            },
        )),
        Box::new(Learner::new(
            embed,
            LearnerKind::MetaBaseline {
                logit_scale: 10.0,
                stopping_rule: "none".into(),
            },
        )),
        Box::new(Learner::new(
            nway.clone(),
            LearnerKind::FoMaml {
                inner: InnerLoop::default(),
            },
        )),
        Box::new(Learner::new(
            nway.clone(),
            LearnerKind::FoMetaCurvature {
                inner: InnerLoop::default(),
                transforms: MetaCurvature::identity(&nway.params),
                variant: "test".into(),
            },
        )),
    ];
    for t in 0..5 {
        let ep = sampler.sample(&store, &mut task_rng(21, t)).unwrap();
        let permuted = ep.permuted(&perm).unwrap();
        for l in &learners {
            let a = l.predict(&ep, &mut seeded(0)).unwrap();
            let b = l.predict(&permuted, &mut seeded(0)).unwrap();
            let mapped: Vec<usize> = a.iter().map(|&p| perm[p]).collect();
            assert_eq!(mapped, b, "{} on task {t}", l.name());
        }
    }
}

#[test]
fn cached_and_uncached_predictions_agree() {
    let (store, sampler) = crnn_episode(10);
    let model = Model::init(tiny_crnn(Head::Embedding(6)), 5);
    let plain = Learner::new(model.clone(), LearnerKind::Protonet);
    let cached = Learner::new(model, LearnerKind::Protonet).with_cache();
    for t in 0..6 {
        let ep = sampler.sample(&store, &mut task_rng(2, t)).unwrap();
        assert_eq!(
            plain.predict(&ep, &mut seeded(0)).unwrap(),
            cached.predict(&ep, &mut seeded(0)).unwrap()
        );
    }
    assert!(!cached.cache().unwrap().is_empty());
}

#[test]
fn gbml_head_narrower_than_episode_is_rejected() {
    let (store, sampler) = crnn_episode(11);
    let ep = sampler.sample(&store, &mut task_rng(0, 0)).unwrap();
    let learner = Learner::new(
        Model::init(tiny_crnn(Head::NWay(2)), 0),
        LearnerKind::FoMaml {
            inner: InnerLoop::default(),
        },
    );
    assert!(learner.predict(&ep, &mut seeded(0)).is_err());
}

#[test]
fn every_learner_trains_end_to_end_on_a_tiny_problem() {
    let (store, pool) = toy_store("toy", 6, 8, (8, 12), 0.2, 77);
    let spec = EpisodeSpec::new(3, 1, 2).unwrap();
    let sampler = EpisodeSampler::new(SamplerMode::Single, spec, vec![pool.clone()]).unwrap();
    let val = EpisodeSampler::new(SamplerMode::Single, spec, vec![pool]).unwrap();
    let data = TrainData {
        store: &store,
        train: &sampler,
        val: Some(&val),
    };
    for alg in Algorithm::ALL {
        let cfg = TrainConfig {
            algorithm: alg,
            steps: 4,
            meta_batch: 2,
            val_every: 2,
            val_tasks: 8,
            conventional: ConventionalConfig {
                epochs: 2,
                batch_size: 8,
                ..Default::default()
            },
            seed: 1,
            ..Default::default()
        };
        let head = if alg.is_gbml() {
            Head::NWay(3)
        } else {
            Head::Embedding(6)
        };
        let out = train(Model::init(tiny_crnn(head), 1), &data, &cfg).unwrap();
        assert_eq!(out.learner.algorithm(), alg);
        assert!(out.best_val_accuracy.is_some(), "{alg}");
        assert!(out.log.iter().all(|r| r.loss.is_finite()));
        let ep = sampler.sample(&store, &mut task_rng(5, 0)).unwrap();
        assert_eq!(out.learner.predict(&ep, &mut seeded(0)).unwrap().len(), 6);
    }
}
