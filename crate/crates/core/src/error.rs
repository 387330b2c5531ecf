use thiserror::Error;

/// Errors produced by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("Hilbert-space dimension {dim} exceeds the configured cap {cap}")]
    Capacity { dim: usize, cap: usize },

    #[error("{symmetry} symmetry violated: commutator norm {residual:.3e}")]
    SymmetryViolation {
        symmetry: &'static str,
        residual: f64,
    },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("degenerate range: every value equals {0}")]
    DegenerateRange(f64),

    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("grid point {index} ({parameter} = {value}): {source}")]
    GridPoint {
        index: usize,
        parameter: String,
        value: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
