use std::path::PathBuf;

use thiserror::Error;

/// Unified error type for the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or parameter range.
    #[error("config: {0}")]
    Config(String),

    /// Filesystem failure, tagged with the offending path.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A record in an input file could not be parsed. `line` is 1-based.
    #[error("{}:{line}: {msg}", path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// Corpus-level precondition violation (empty file, duplicate ids, ...).
    #[error("corpus: {0}")]
    Corpus(String),

    /// Embedding cache is unusable; re-run the embed stage.
    #[error("cache: {0}")]
    Cache(String),

    /// The embedding provider failed on one sentence. Retryable by the caller.
    #[error("provider failed on {doc_id}[{sent_index}]: {msg}")]
    Provider {
        doc_id: String,
        sent_index: usize,
        msg: String,
    },

    /// A prerequisite stage has not produced its artifacts yet.
    #[error("missing prerequisite: {0}")]
    MissingStage(String),

    /// NaN/Inf, zero-norm vectors, rank deficiency, diverging training.
    #[error("numerical failure: {0}")]
    Numeric(String),

    /// Any other violated precondition.
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI: 2 config/input, 3 missing stage,
    /// 4 numerical, 1 everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Malformed { .. } | Error::Corpus(_) | Error::Invalid(_) => 2,
            Error::MissingStage(_) | Error::Cache(_) => 3,
            Error::Numeric(_) => 4,
            _ => 1,
        }
    }
}
