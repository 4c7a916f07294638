//! CRNN backbone with hand-written gradients, plus the optimiser and loss
//! used by the learners.

pub mod checkpoint;
pub mod crnn;
pub mod encoder;
pub mod error;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod params;

pub use checkpoint::{load_json, save_json, Checkpoint};
pub use crnn::{Crnn, CrnnConfig, Head, Readout};
pub use encoder::{stack_inputs, Encoder, LinearEncoder};
pub use error::{Error, Result};
pub use layers::BnMode;
pub use loss::{argmax_rows, cross_entropy, log_softmax, LossOutput};
pub use optim::{sgd_step, Adam};
pub use params::Params;
