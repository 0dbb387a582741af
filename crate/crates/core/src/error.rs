use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no training data")]
    NoTrainingData,

    #[error("times not strictly increasing (at index {index})")]
    TimesNotIncreasing { index: usize },

    #[error("path too short: need at least 2 rows, got {rows}")]
    PathTooShort { rows: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unbiased estimator needs ≥2 samples (got m={m}, n={n})")]
    TooFewSamples { m: usize, n: usize },

    #[error("PDE solve diverged at cell ({row}, {col}); the static-kernel bandwidth is too small or the paths are not normalized")]
    PdeDiverged { row: usize, col: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("MCD underdetermined — increase PCA reduction or reduce depth (n={n} rows, p={p} columns)")]
    McdUnderdetermined { n: usize, p: usize },

    #[error("{file}:{line}: {message}")]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::PdeDiverged { .. } | Error::NotPositiveDefinite(_) | Error::McdUnderdetermined { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
