//! Error type shared by every module of the core crate.

use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("model not fitted: {0}")]
    NotFitted(String),
    #[error("no convergence after {iterations} iterations (gradient norm {gradient_norm:e})")]
    Convergence { iterations: usize, gradient_norm: f64 },
    #[error("singular design matrix")]
    SingularDesign,
    #[error("too few exceedances for the tail model: {found} < {required}")]
    TooFewExceedances { found: usize, required: usize },
    #[error("estimation error: {0}")]
    Estimation(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("degenerate denominator {value:e} below floor {floor:e}")]
    DegenerateDenominator { value: f64, floor: f64 },
    #[error("no multi-marginal fair rule: singular constraint system")]
    NoFairRule,
}

impl Error {
    /// True for failures of the numerics (as opposed to bad inputs).
    #[must_use]
    pub fn is_numerical(&self) -> bool {
        !matches!(self, Error::InvalidInput(_) | Error::NotFitted(_))
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = core::result::Result<T, Error>;

/// Rejects NaN and infinities with a message naming the offending input.
pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::InvalidInput(alloc::format!(
            "{what} contains a non-finite value at position {i}"
        ))),
    }
}
