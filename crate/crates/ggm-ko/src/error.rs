//! Crate-wide error type.
//!
//! Exit-code policy for the CLI: problems a user can fix by changing
//! inputs or flags map to code 2, numerical breakdowns discovered mid
//! computation map to code 3.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:.3e} at column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },

    #[error("eigensolver did not converge within {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("need more rows than columns: n = {n}, p = {p}")]
    SampleSizeTooSmall { n: usize, p: usize },

    #[error("column {column} is degenerate (zero norm or exact collinearity)")]
    DegenerateColumn { column: usize },

    #[error("degrees of freedom must be at least 1, got {dof}")]
    InvalidDof { dof: usize },

    #[error("target FDR level must lie in [0, 1], got {q}")]
    InvalidQ { q: f64 },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("swap set contains a diagonal index ({index}, {index})")]
    DiagonalInSwapSet { index: usize },

    #[error("threshold grid is empty")]
    EmptyGrid,

    #[error("threshold grid must be strictly descending and positive")]
    InvalidGrid,

    #[error("sample is empty")]
    EmptySample,

    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },

    #[error("negative abundance at row {row}, column {column}")]
    NegativeAbundance { row: usize, column: usize },

    #[error("log argument not positive after pseudocount at row {row}, column {column}")]
    NonPositiveAfterPseudocount { row: usize, column: usize },

    #[error("prevalence filter removed every feature")]
    AllFeaturesFiltered,

    #[error("cannot draw {requested} rows from {available}")]
    SubsampleTooLarge { requested: usize, available: usize },

    #[error("need at least {needed} nonzero paired differences, got {got}")]
    TooFewPairs { needed: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("replicate {replicate} failed: {source}")]
    ReplicateFailed {
        replicate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("output directory {0} already exists and is not empty")]
    OutputDirNotEmpty(String),

    #[error("malformed input: {0}")]
    MalformedInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code the CLI should use for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotPositiveDefinite { .. }
            | Error::NoConvergence { .. }
            | Error::DegenerateColumn { .. } => 3,
            Error::ReplicateFailed { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
