use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("coverage gap: cylinder column {column} (row {row}) is not covered by any crop")]
    CoverageGap { column: usize, row: usize },

    #[error("dimension mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Dimension {
        context: &'static str,
        expected: (usize, usize, usize),
        actual: (usize, usize, usize),
    },

    #[error("unknown pixel {index} received zero total weight from all crops")]
    UncoveredUnknown { index: usize },

    #[error("oracle failed on crop {crop} at step {step}: {message}")]
    Oracle {
        crop: usize,
        step: usize,
        message: String,
    },

    #[error("non-finite value at outer iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("non-finite input: {0}")]
    NonFiniteInput(&'static str),

    #[error("objective increased by {increase:e} after {stage} of iteration {iteration}")]
    ObjectiveIncrease {
        iteration: usize,
        stage: &'static str,
        increase: f64,
    },

    #[error("unknown {kind} '{name}' (registered: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("empty seed list")]
    EmptySeeds,

    #[error("malformed {format} file {path}: {message}")]
    Format {
        format: &'static str,
        path: PathBuf,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
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
