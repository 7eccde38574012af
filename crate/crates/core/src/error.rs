use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dangling reference to `{id}` ({context})")]
    DanglingReference { id: String, context: String },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("unknown category `{category}` on item `{id}`")]
    UnknownCategory { id: String, category: String },

    #[error("unknown item `{0}`")]
    UnknownItem(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch{}: expected {expected}, found {found}", id.as_ref().map(|i| format!(" for `{i}`")).unwrap_or_default())]
    DimensionMismatch {
        id: Option<String>,
        expected: usize,
        found: usize,
    },

    #[error("zero vector{}", .0.as_ref().map(|i| format!(" for `{i}`")).unwrap_or_default())]
    ZeroVector(Option<String>),

    #[error("non-finite value{}", .0.as_ref().map(|i| format!(" for `{i}`")).unwrap_or_default())]
    NonFinite(Option<String>),

    #[error("missing features for item `{0}`")]
    MissingFeatures(String),

    #[error("missing modality: {0}")]
    MissingModality(&'static str),

    #[error("method `{0}` is unavailable: no trained model loaded")]
    MethodUnavailable(String),

    #[error("list too short: {0} members, need at least 2")]
    ListTooShort(usize),

    #[error("text query `{0}` has no group mapping")]
    UnmappedQuery(String),

    #[error("vocabulary is empty after min_count filtering")]
    EmptyVocabulary,

    #[error("training diverged: non-finite loss in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("no valid positive pairs for siamese training")]
    NoPositivePairs,

    #[error("no training examples: {0}")]
    NoTrainingData(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl ToString) -> Self {
        Error::Parse {
            line,
            message: message.to_string(),
        }
    }

    /// True for errors raised by a training loop rather than by bad input data.
    pub fn is_training_failure(&self) -> bool {
        matches!(
            self,
            Error::EmptyVocabulary
                | Error::NonFiniteLoss { .. }
                | Error::NoPositivePairs
                | Error::NoTrainingData(_)
        )
    }
}
