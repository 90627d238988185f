use std::io;

use thiserror::Error;

/// Errors produced by the embedding library.
#[derive(Debug, Error)]
pub enum BoveError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular system in {what}; use a positive regularizer (lambda > 0)")]
    Singular { what: &'static str },

    #[error("embedding size r={r} exceeds the ALS cap of {cap}; use the sgd trainer")]
    RankCap { r: usize, cap: usize },

    #[error("training diverged at round {round}: non-finite objective")]
    Divergence { round: usize },

    #[error("model format error: {0}")]
    Format(String),

    #[error("unsupported model format version {0}")]
    Version(u32),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, BoveError>;
