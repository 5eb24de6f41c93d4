use thiserror::Error;

/// Errors produced by the estimation and prediction routines.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("evaluation point {value} outside the domain [{lo}, {hi}]")]
    OutOfDomain { value: f64, lo: f64, hi: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("kriging matrix is singular; locations {i} and {j} coincide with zero nugget")]
    SingularKriging { i: usize, j: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("variogram fit failed: {0}")]
    FitFailure(String),

    #[error("requested rank {requested} exceeds usable rank {usable}")]
    RankExceeded { requested: usize, usable: usize },

    #[error("degenerate operator: {0}")]
    DegenerateOperator(String),

    #[error("unstable autoregressive operator: spectral radius {0} >= 1")]
    UnstableOperator(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// Whether the error stems from malformed or inconsistent input rather
    /// than a numerical breakdown. The CLI maps input errors to exit code 2
    /// and numerical ones to exit code 3.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_) | Error::BasisMismatch(_) | Error::OutOfDomain { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
