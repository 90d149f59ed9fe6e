use thiserror::Error;

/// Failures reported by every layer of the toolkit.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("modulus is not non-decreasing: w({t_lo}) = {w_lo} > w({t_hi}) = {w_hi}")]
    MonotonicityViolation { t_lo: f64, t_hi: f64, w_lo: f64, w_hi: f64 },

    #[error("quadrature budget exhausted; partial value {partial}")]
    BudgetExceeded { partial: f64 },

    #[error("divergent quantity: {0}")]
    Divergent(String),

    #[error("resolution too coarse: {0}")]
    Resolution(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("geometry precondition failed: {0}")]
    Geometry(String),

    #[error("cube pool does not cover {count} grid points (first at index {first})")]
    Coverage { count: usize, first: usize },

    #[error("cubes are not disjoint: #{0} and #{1}")]
    Disjointness(usize, usize),

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("non-positive weight sample at index {0}")]
    Positivity(usize),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
