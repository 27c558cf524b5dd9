use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid mdp: {0}")]
    InvalidMdp(String),

    #[error("index out of range: {0}")]
    Input(String),

    #[error("markov chain is not irreducible and aperiodic; offending states {states:?}")]
    Irreducible { states: Vec<usize> },

    #[error("{what} is rank deficient (singular value ratio {ratio:e})")]
    Rank { what: String, ratio: f64 },

    #[error("invalid parameters: {0}")]
    Parameter(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("consensus did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("divergence at step {step}: {reason}")]
    Divergence { step: u64, reason: String },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("problem too large for exact enumeration: {0}")]
    Scale(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse { path: path.into(), message: message.to_string() }
    }
}
