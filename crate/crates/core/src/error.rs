use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("{context}: matrix is not stable (spectral radius {spectral_radius:.6})")]
    Unstable {
        context: &'static str,
        spectral_radius: f64,
    },

    #[error("non-finite value at step {step}")]
    NonFinite { step: usize },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("singular matrix: {0}")]
    Singular(&'static str),

    #[error("invalid pole #{index}: {reason}")]
    InvalidPole { index: usize, reason: String },

    #[error("regressor covariance is not persistently exciting (min eigenvalue {min_eigenvalue:.3e})")]
    ExcitationDeficient { min_eigenvalue: f64 },

    #[error("bound is vacuous: tau = {tau} >= 1")]
    BoundVacuous { tau: f64 },

    #[error("{0}")]
    InvalidArgument(String),
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
