use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Conll { line: usize, message: String },

    #[error("sentence {sentence} (starting at line {line}): {message}")]
    Tree {
        sentence: usize,
        line: usize,
        message: String,
    },

    #[error("embedding file line {line}: expected dimension {expected}, found {found}")]
    EmbeddingDimension {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty sentence")]
    EmptySentence,

    #[error("invalid action {action} in configuration: {reason}")]
    InvalidAction { action: String, reason: String },

    #[error("configuration is terminal")]
    Terminal,

    #[error("configuration is not terminal")]
    NotTerminal,

    #[error("token {0} has no head")]
    MissingHead(usize),

    #[error("static oracle has no applicable action (non-projective input?)")]
    OracleFailure,

    #[error("brute-force search exceeded its budget of {budget} states")]
    SearchBudget { budget: usize },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0} node")]
    NonFinite(&'static str),

    #[error("loss must be a scalar, found {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("stack LSTM is empty")]
    EmptyStack,

    #[error("empty action set")]
    EmptyActionSet,

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("alpha must satisfy 0 < alpha <= 1, got {0}")]
    Alpha(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model file: {0}")]
    Model(String),

    #[error("length mismatch: {0}")]
    Mismatch(String),

    #[error("verification failed: {0}")]
    Verification(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
