//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("text is empty or whitespace-only")]
    EmptyText,
    #[error("text contains no word tokens")]
    NoWords,
    #[error("cannot count syllables of an empty token")]
    EmptyToken,

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("source has no whitespace tokens")]
    EmptySource,
    #[error("requested {k} items from a corpus of {available}")]
    KTooLarge { k: usize, available: usize },
    #[error("index does not match the demonstration store: {0}")]
    IndexMismatch(String),
    #[error("unsupported index format version {0}")]
    IndexVersion(u32),

    #[error("unknown task {0:?} (expected PL or ER)")]
    UnknownTask(String),
    #[error("adaptation to post-edit is empty")]
    EmptyAdaptation,
    #[error("response has no usable correction section")]
    MissingCorrection,
    #[error("invalid decoding parameters: {0}")]
    InvalidDecoding(String),
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("provider returned an empty response")]
    ResponseEmpty,

    #[error("candidate adaptation is empty")]
    EmptyCandidate,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no candidate streams for document {0}")]
    NoCandidates(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate document id {id:?}")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },
    #[error("invalid split: {0}")]
    SpecInvalid(String),
    #[error("document {0:?} has no reference adaptation")]
    MissingReferences(String),
    #[error("unknown document id {0:?}")]
    UnknownDocId(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
