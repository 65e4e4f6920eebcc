use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand extents disagree along a named axis.
    #[error("{op}: dimension mismatch on axis {axis}: {detail}")]
    Dimension {
        op: &'static str,
        axis: String,
        detail: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an API precondition (non-scalar loss, single-class batch, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("sequence too short: {len} frames, need at least {need}")]
    SequenceTooShort { len: usize, need: usize },

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("numeric abort: {0}")]
    Numeric(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dim(op: &'static str, axis: impl ToString, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            axis: axis.to_string(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable class name, stable across releases.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Domain(_) => "domain",
            Error::Config(_) => "config",
            Error::Contract(_) => "contract",
            Error::SequenceTooShort { .. } => "sequence_too_short",
            Error::Ingestion(_) => "ingestion",
            Error::Numeric(_) => "numeric",
            Error::Io { .. } => "io",
        }
    }
}
