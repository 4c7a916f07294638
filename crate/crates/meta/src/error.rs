#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] fsaudio_core::Error),
    #[error(transparent)]
    Nn(#[from] fsaudio_nn::Error),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Unsupported(String),
    #[error("non-finite loss at {context}")]
    NonFinite { context: String },
    #[error("missing table cell: dataset {dataset}, algorithm {algorithm}")]
    MissingCell { dataset: usize, algorithm: usize },
    #[error("no feature vector for clip `{0}`")]
    MissingFeature(String),
    #[error("feature table line {line}: {message}")]
    BadFeatureTable { line: usize, message: String },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
