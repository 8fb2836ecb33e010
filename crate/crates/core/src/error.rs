use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed header: {reason}")]
    Header { path: PathBuf, reason: String },
    #[error("{path}: payload holds {actual} bytes, header declares {expected}")]
    PayloadSize {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("{path}: unsupported dtype {dtype:?}")]
    Dtype { path: PathBuf, dtype: String },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("label {label} at index {index} is out of range for {num_labels} labels")]
    LabelOutOfRange {
        index: usize,
        label: u8,
        num_labels: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("features have zero variance; cannot standardize")]
    ZeroVariance,
    #[error("label {0} has no training samples")]
    EmptyClass(usize),
    #[error("solver produced a non-finite value at iteration {iteration}")]
    Diverged { iteration: usize },
}

impl Error {
    /// Numerical failures, as opposed to bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Diverged { .. })
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
