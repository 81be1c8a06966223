use thiserror::Error;

/// Errors raised by the numerical engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("atom position z_A = {0} m must lie above the stack")]
    InvalidPosition(f64),
    #[error("quadrature did not converge: value {value:e}, error estimate {abs_error:e} after {evaluations} evaluations")]
    NotConverged {
        value: f64,
        abs_error: f64,
        evaluations: usize,
    },
    #[error("singular input: {0}")]
    Singular(String),
}

pub type Result<T> = std::result::Result<T, Error>;
