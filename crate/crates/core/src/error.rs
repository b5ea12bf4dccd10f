use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the training stack.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform.
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A factorization or decomposition failed, or a value left its valid range.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A dense materialization would exceed its hard size cap.
    #[error("size cap exceeded: {0}")]
    Size(String),

    /// Internal state does not match the request (wrong mode, missing pair, stale cache).
    #[error("inconsistent state: {0}")]
    State(String),

    /// Malformed user data (labels, CSV contents).
    #[error("invalid input: {0}")]
    Input(String),

    /// A configuration value violates its constraint.
    #[error("config error: field `{field}`: {constraint}")]
    Config { field: String, constraint: String },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, constraint: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            constraint: constraint.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 config/input, 3 numerical, 4 IO, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Input(_) => 2,
            Error::Numerical(_) => 3,
            Error::Io { .. } => 4,
            Error::Dimension { .. } | Error::Size(_) | Error::State(_) => 1,
        }
    }
}
