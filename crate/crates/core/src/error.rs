use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at {path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("value {attempted:?} (from {raw:?}) does not match the {field} format")]
    FormatViolation {
        field: String,
        raw: String,
        attempted: String,
    },

    #[error("training error: {0}")]
    Training(String),

    #[error("correction failed: {0}")]
    Correction(String),

    #[error("utterance index {index} out of range for call {call_id} ({len} utterances)")]
    IndexOutOfRange {
        call_id: String,
        index: usize,
        len: usize,
    },

    #[error("decisions and records are not keyed identically; missing: {}", .0.join(", "))]
    KeyMismatch(Vec<String>),

    #[error("remote backend error: {0}")]
    Remote(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
