use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input {got:?} does not match model input {expected:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("input of {mels}x{frames} is too small for {blocks} pooling stages")]
    InputTooSmall { mels: usize, frames: usize, blocks: usize },
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
    #[error("non-finite loss")]
    NonFinite,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
