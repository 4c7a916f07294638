use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty manifest")]
    EmptyManifest,

    #[error("manifest record {record}: {message}")]
    BadRecord { record: usize, message: String },

    #[error("duplicate clip id `{0}`")]
    DuplicateClip(String),

    #[error("pruning removed all data")]
    PrunedEverything,

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("need at least {needed} classes, found {found}")]
    TooFewClasses { needed: usize, found: usize },

    #[error("class `{class}` has {available} clips, {needed} needed")]
    TooFewClips {
        class: String,
        available: usize,
        needed: usize,
    },

    #[error("split file: {0}")]
    BadSplit(String),

    #[error("episode: {0}")]
    BadEpisode(String),

    #[error("missing cache entry for clip `{0}`")]
    MissingCacheEntry(String),

    #[error("corrupt cache file {path}: {message}")]
    CorruptCache { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
