use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("eigenvector matrix is not orthonormal (max |UᵀU - I| = {deviation:e})")]
    NonOrthonormal { deviation: f64 },

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("invalid spectral band: need 0 < tau <= zeta, got tau={tau}, zeta={zeta}")]
    InvalidBand { tau: f64, zeta: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("quadratic spectrum is empty")]
    EmptySpectrum,

    #[error("eigenvalue {index} is not positive ({value})")]
    NonPositiveEigenvalue { index: usize, value: f64 },

    #[error("label at row {row} must be +1 or -1, found {value}")]
    BadLabel { row: usize, value: f64 },

    #[error("temperature must be positive, found {0}")]
    NonPositiveTemp(f64),

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: usize, message: String },

    #[error("dataset file is empty")]
    EmptyFile,

    #[error("oracle required: {0}")]
    OracleRequired(&'static str),

    #[error("theory step-size mode needs smoothness constants from the oracle")]
    TheoryModeNeedsOracle,

    #[error("non-finite value in {context} at iteration {k}")]
    NonFiniteValue { context: &'static str, k: usize },

    #[error("value at row {row} (k = {k}) is not positive; cannot take logarithm")]
    NonPositiveValue { row: usize, k: usize },

    #[error("rate fit needs at least {needed} rows in the window, found {found}")]
    TooFewRows { needed: usize, found: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
