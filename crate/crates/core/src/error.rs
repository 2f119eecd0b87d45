use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read `{path}`: {source}")]
    Ingest {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input at record {record}: {message}")]
    Parse { record: u64, message: String },

    #[error("no interactions survive filtering")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("non-finite value in {context} (index {index})")]
    Numerical { context: String, index: usize },

    #[error("negative sampling stalled for user {user}: no non-interacted item found")]
    SamplingStall { user: u32 },

    #[error("inconsistent graph: {0}")]
    Graph(String),

    #[error("bad artifact format: {0}")]
    Format(String),

    #[error("training diverged at epoch {epoch}, step {step}")]
    Diverged {
        epoch: usize,
        step: usize,
        /// Embeddings from the last epoch that finished with finite losses.
        last_good: Box<crate::matrix::Matrix>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse error classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Dimension { .. } => ErrorClass::Config,
            Error::Ingest { .. }
            | Error::Parse { .. }
            | Error::EmptyDataset
            | Error::SamplingStall { .. }
            | Error::Graph(_)
            | Error::Format(_)
            | Error::Csv(_)
            | Error::Json(_) => ErrorClass::Data,
            Error::Numerical { .. } | Error::Diverged { .. } => ErrorClass::Numerical,
            Error::Io(_) => ErrorClass::Io,
        }
    }

    pub fn dimension(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
