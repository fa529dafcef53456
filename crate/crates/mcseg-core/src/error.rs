use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by corpus handling, model execution and training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus: {0}")]
    EmptyCorpus(&'static str),

    #[error("{path}:{line}: malformed mapping entry (expected one character, a tab, one character)")]
    MappingLine { path: PathBuf, line: usize },

    #[error("invalid criterion name {0:?}: must be short lowercase ASCII")]
    CriterionName(String),

    #[error("invalid segmentation: {0}")]
    InvalidSegmentation(String),

    #[error("label/character alignment mismatch: {labels} labels vs {chars} characters{}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    Alignment {
        labels: usize,
        chars: usize,
        context: Option<String>,
    },

    #[error("sentence {index}: gold and predicted character streams differ")]
    StreamMismatch { index: usize },

    #[error("token id {id} out of range (vocabulary size {vocab})")]
    TokenRange { id: usize, vocab: usize },

    #[error("no text characters left after truncation to {max_len}")]
    EmptyAfterTruncation { max_len: usize },

    #[error("non-finite {what} at step {step}")]
    Divergence { what: &'static str, step: u64 },

    #[error("criterion {0:?} is not in the model vocabulary and is not \"unc\"")]
    UnknownCriterion(String),

    #[error("checkpoint does not match: {0}")]
    CheckpointMismatch(String),

    #[error("{path}: {msg}")]
    FileFormat { path: PathBuf, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error("invalid rate {0}: must lie in (0, 1]")]
    Rate(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
