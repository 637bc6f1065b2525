use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("time regression: event at {got} ns precedes previous event at {prev} ns")]
    Ordering { prev: f64, got: f64 },

    #[error("cdf line {line}: {msg}")]
    CdfParse { line: usize, msg: String },

    #[error("cost/rate parameters violate the optimum precondition (ln(B/A) = {ln_ratio:.6} > 0)")]
    Regime { ln_ratio: f64 },

    #[error("insufficient data: need at least {need} samples, got {got}")]
    InsufficientData { need: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("simulator invariant violated: {0}")]
    Invariant(String),
}

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
