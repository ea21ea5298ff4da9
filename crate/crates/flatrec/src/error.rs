//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("input contains no ratings")]
    EmptyDataset,

    #[error("line {line}: {message}")]
    MalformedRow { line: usize, message: String },

    #[error("invalid rating scale: {0}")]
    InvalidScale(String),

    #[error("observed rating {value} is not on the supplied scale")]
    OffScale { value: String },

    #[error("cannot split {n_ratings} ratings into {k} folds")]
    InvalidFolds { k: usize, n_ratings: usize },

    #[error("profile is empty")]
    EmptyProfile,

    #[error("value {value} is not a level of the rating scale")]
    NotOnScale { value: String },

    #[error("invalid transform spec '{spec}': {message}")]
    InvalidSpec { spec: String, message: String },

    #[error("input slice is empty")]
    EmptyInput,

    #[error("value {value} lies outside the binning range [{lo}, {hi}]")]
    OutOfRange { value: String, lo: String, hi: String },

    #[error("binning range is degenerate (lo {lo} >= hi {hi})")]
    DegenerateRange { lo: String, hi: String },

    #[error("need at least 2 bins, got {0}")]
    InvalidBins(usize),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("inputs have mismatched lengths ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },

    #[error("input has zero variance")]
    ZeroVariance,

    #[error("need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged at iteration {iteration}: loss is not finite")]
    TrainingDiverged { iteration: usize },

    #[error("checkpoint rejected: {0}")]
    BadCheckpoint(String),

    #[error("long-tail cut {0} must lie strictly between 0 and 1")]
    InvalidCut(f64),

    #[error("experiment has no conditions")]
    NoConditions,

    #[error("all grid cells failed: {0}")]
    AllCellsFailed(String),
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
