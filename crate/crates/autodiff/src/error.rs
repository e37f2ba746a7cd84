use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("rescaled Laplacian norm estimate {norm} exceeds 1")]
    SpectrumOutOfRange { norm: f64 },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("malformed checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, expected: &[usize], actual: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        expected: expected.to_vec(),
        actual: actual.to_vec(),
    }
}
