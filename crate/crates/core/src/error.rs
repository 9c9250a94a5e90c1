use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid with {m} points is too small for the periodic stencil (need at least {min})")]
    GridTooSmall { m: usize, min: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("{solver} integration diverged at step {step}")]
    Diverged { solver: &'static str, step: usize },

    #[error("rank {p} out of range (1..={max})")]
    RankOutOfRange { p: usize, max: usize },

    #[error("singular value spectrum is identically zero")]
    ZeroSpectrum,

    #[error("snapshot column {column} is flat; no correlation peak to track")]
    FlatSnapshot { column: usize },

    #[error("degenerate basis: mass matrix M1 is not positive definite at shift sample {sample} (min eigenvalue {min_eig:e})")]
    DegenerateBasis { sample: usize, min_eig: f64 },

    #[error("near-degenerate mass matrix at time step {step} (condition estimate {condition:e})")]
    NearDegenerate { step: usize, condition: f64 },

    #[error("{0} requires a single-frame cache with constant Galerkin matrices")]
    UnsupportedCache(&'static str),

    #[error("singular value decomposition failed to converge")]
    SvdFailed,

    #[error("bad matrix file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dims(
        context: &'static str,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
