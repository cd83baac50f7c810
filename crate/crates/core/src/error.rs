use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("generator index {index} out of range (count {count})")]
    GeneratorIndex { index: usize, count: usize },

    #[error("orbit is degenerate: smallest orbit Gram eigenvalue {min_eig:e} relative to largest {max_eig:e}")]
    OrbitDegenerate { min_eig: f64, max_eig: f64 },

    #[error("gauge is not transversal: Faddeev-Popov matrix is singular (smallest singular value {min_sv:e})")]
    NonTransversal { min_sv: f64 },

    #[error("constraint Gram is singular (smallest eigenvalue {min_eig:e})")]
    SingularGram { min_eig: f64 },

    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: usize },

    #[error("divergence at step {step}: loss {loss:e}")]
    Divergence { step: usize, loss: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("unknown experiment '{0}'")]
    UnknownExperiment(String),

    #[error("unknown model kind '{0}'")]
    UnknownModelKind(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("did not converge: {0}")]
    NoConvergence(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
