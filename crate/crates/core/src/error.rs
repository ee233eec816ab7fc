use std::path::PathBuf;

use thiserror::Error;

use crate::solver::SolverTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("solver diverged on column {column} after {iterations} iterations: non-finite objective")]
    Divergence {
        column: usize,
        iterations: usize,
        trace: Box<SolverTrace>,
    },

    #[error("insufficient data: {samples} samples for {variables} variables (need more samples than variables)")]
    InsufficientData { samples: usize, variables: usize },

    #[error("degenerate data: column {column} has zero variance")]
    DegenerateData { column: usize },

    #[error("non-finite value in input data")]
    NonFinite,

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("malformed archive: {0}")]
    MalformedArchive(String),

    #[error("archive format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("archive invariant violated: {0}")]
    InvariantViolation(String),

    #[error("refusing to overwrite existing file {0}")]
    AlreadyExists(PathBuf),

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
}
