use thiserror::Error;

/// Errors raised by the allocation engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A scalar argument fell outside the domain of the function it was passed to.
    #[error("{what} = {value} outside [{lo}, {hi}]")]
    Domain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    /// A modelling assumption (C.x, U.V.x, U.E) does not hold for the supplied data.
    #[error("assumption {assumption} violated: {detail}")]
    Assumption {
        assumption: &'static str,
        detail: String,
    },

    /// An iterative solver ran out of budget. Carries the best iterate seen (flattened).
    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    /// The dual function of a bisection was not monotone in its multiplier.
    #[error("non-monotone dual in {solver} at multiplier {multiplier}")]
    NonMonotone { solver: &'static str, multiplier: f64 },

    /// An ODE iterate left H by more than the allowed tolerance.
    #[error("ODE iterate left H by {excess:e} at tau = {tau}")]
    LeftDomain { tau: f64, excess: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
