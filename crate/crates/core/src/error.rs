use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("symmetric eigensolver did not converge within {0} iterations")]
    NoConvergence(usize),

    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e}, largest {largest:e})")]
    NotPsd { eigenvalue: f64, largest: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix has no nonzero entries")]
    ZeroMatrix,

    #[error("degenerate constants: {0}")]
    Degenerate(String),

    #[error("sketch column {0} has zero curvature under U")]
    DegenerateColumn(usize),

    #[error("invalid sparse matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid sketch: {0}")]
    InvalidSketch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("objective increased from {before:e} to {after:e}")]
    AscentDetected { before: f64, after: f64 },

    #[error("line search needs l(0) < 0, got {0:e}")]
    NotDescent(f64),

    #[error("line search expansion reached t = {0:e} with l(t) still below -epsilon")]
    Unbounded(f64),

    #[error("line search bisection stalled on [{lo:e}, {hi:e}] with |l(t)| = {residual:e}")]
    LineSearchExhausted { lo: f64, hi: f64, residual: f64 },

    #[error("iteration {k}: {source}")]
    AtIteration {
        k: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("dimension {dim} exceeds the diagnostic cap {cap}")]
    TooLarge { dim: usize, cap: usize },

    #[error("relative smoothness/convexity violated: {0}")]
    ViolationFound(Box<crate::diagnostics::Witness>),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: feature indices must be strictly increasing")]
    NonMonotoneIndex { line: usize },

    #[error("labels are not a two-value set: found {0} distinct values")]
    NonBinaryLabels(usize),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dataset has already been preprocessed")]
    DoublePreprocess,

    #[error("trace schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at_iteration(self, k: usize) -> Self {
        Error::AtIteration {
            k,
            source: Box::new(self),
        }
    }
}
