use std::path::PathBuf;

use thiserror::Error;

use crate::data_io::IdxError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {actual})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("capacity exceeded: {n_visible} visible units exceeds the enumeration bound of {max}")]
    Capacity { n_visible: usize, max: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite gradient component in block {block} at index {index}")]
    NonFiniteGradient { block: usize, index: usize },

    #[error("idx: {0}")]
    Idx(#[from] IdxError),

    #[error("model file version {found} is not supported (expected {expected})")]
    ModelVersion { found: u32, expected: u32 },

    #[error("model file schema violation: {0}")]
    ModelSchema(String),

    #[error("malformed dataset file {path}: {reason}")]
    DatasetFormat { path: PathBuf, reason: String },

    #[error("missing data file {0}")]
    MissingFile(PathBuf),

    #[error("{} of {total} repetitions failed; first: repetition {}: {}", failures.len(), failures[0].0, failures[0].1)]
    RepetitionsFailed {
        total: usize,
        /// `(repetition index, error message)`, sorted by index.
        failures: Vec<(usize, String)>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used by the CLI's one-line error report.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::DimensionMismatch { .. } => "dimension",
            Error::Capacity { .. } => "capacity",
            Error::EmptyDataset => "empty-dataset",
            Error::InvalidConfig(_) => "config",
            Error::NonFiniteGradient { .. } => "non-finite-gradient",
            Error::Idx(_) => "idx",
            Error::ModelVersion { .. } => "model-version",
            Error::ModelSchema(_) => "model-schema",
            Error::DatasetFormat { .. } => "dataset-format",
            Error::MissingFile(_) => "missing-file",
            Error::RepetitionsFailed { .. } => "repetitions-failed",
            Error::Io { .. } => "io",
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            actual,
        })
    }
}
