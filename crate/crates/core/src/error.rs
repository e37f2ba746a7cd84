use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the connectome data, metric and harmonization routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric at ({row}, {col})")]
    AsymmetricMatrix { row: usize, col: usize },
    #[error("negative entry at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize },
    #[error("nonzero diagonal entry at ({index}, {index})")]
    NonzeroDiagonal { index: usize },
    #[error("non-integer entry at ({row}, {col})")]
    NonIntegerEntry { row: usize, col: usize },
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("parse error in {path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("empty input")]
    EmptyInput,
    #[error("at least {required} subjects are required, got {actual}")]
    InsufficientSubjects { required: usize, actual: usize },
    #[error("site design has rank {rank}, need {required}")]
    RankDeficientSites { rank: usize, required: usize },
    #[error("regression design has rank {rank} < 4")]
    RankDeficientDesign { rank: usize },
    #[error("too few observations: {actual} < {required}")]
    TooFewObservations { required: usize, actual: usize },
    #[error("matrix is not symmetric within tolerance at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("eigensolver did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("unknown site index {0}")]
    UnknownSite(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
