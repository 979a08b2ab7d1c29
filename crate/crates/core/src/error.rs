use thiserror::Error;

/// Errors raised by model fitting, sampling and the replication harness.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("response is constant; the logistic MLE does not exist")]
    DegenerateResponse,

    #[error("perfect separation: coefficients diverge (norm {norm:.3e})")]
    Separation { norm: f64 },

    #[error("Newton iteration did not converge within {iterations} iterations (max |gradient| {max_gradient:.3e})")]
    NonConvergence { iterations: usize, max_gradient: f64 },

    #[error("Hessian is singular or not negative definite")]
    SingularHessian,

    #[error("quintile stratum {bin} is empty")]
    DegenerateStrata { bin: usize },

    #[error("log target is not finite at the initial value")]
    NonFiniteTarget,

    #[error("{failed} of {total} {what} failed (limit {limit:.0}%)")]
    TooManyFailures {
        what: &'static str,
        failed: usize,
        total: usize,
        limit: f64,
    },

    #[error("strategy {strategy}: {failed} of {total} replicates failed")]
    BatchFailure {
        strategy: String,
        failed: usize,
        total: usize,
    },

    #[error("no usable results for the requested selection")]
    EmptySelection,

    #[error("malformed input at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
