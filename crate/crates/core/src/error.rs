use thiserror::Error;

/// Errors produced by the solvers, operators and codecs in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("diverged at iteration {iteration}: objective {objective:e} exceeds guard {limit:e}")]
    Diverged {
        iteration: usize,
        objective: f64,
        limit: f64,
    },

    #[error("malformed container: {0}")]
    Format(String),

    #[error("time series input: {0}")]
    Series(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
