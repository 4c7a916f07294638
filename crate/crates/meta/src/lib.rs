//! Few-shot learners over the CRNN backbone and the evaluation protocol.

pub mod conventional;
pub mod episodic;
pub mod error;
pub mod eval;
pub mod features;
pub mod learner;
pub mod maml;
pub mod metric;
pub mod rank;
pub mod reference;
pub mod report;
pub mod train;

pub use conventional::{
    conventional_train, feature_mean, inverse_frequency, inverse_frequency_weights, ConventionalConfig,
    ConventionalOutcome, ConventionalTrainer, LabelledSet, TrainItem,
};
pub use episodic::{metric_episode_step, protonet_episode, EpisodeStep, MetricHead};
pub use error::{Error, Result};
pub use eval::{evaluate, sweep_shots, sweep_ways, EvalOptions, EvalReport, SweepEntry};
pub use features::{fixed_feature_evaluate, FeatureTable, FixedClassifier, LinearSvm, SvmConfig};
pub use learner::{Algorithm, EpisodeClassifier, Learner, LearnerKind, LearnerState, Model, RandomLearner};
pub use maml::{adapt, fomaml_meta_step, meta_gradient, metacurvature_meta_step, InnerLoop, MetaCurvature};
pub use metric::FeatureNorm;
pub use rank::average_rank;
pub use report::ResultsTable;
pub use train::{build_model, train, validation_sampler, TrainConfig, TrainData, TrainOutcome, TrainRecord};
