use thiserror::Error;

use crate::types::RunReport;

pub type Result<T, E = DsplError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DsplError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    /// The iterative local solver hit its cap; `last` is the final iterate.
    #[error("descent did not converge in {iterations} iterations (gradient norm {grad_norm:e})")]
    DescentFailed {
        iterations: usize,
        grad_norm: f64,
        last: Vec<f64>,
    },

    #[error(
        "augmented Lagrangian became non-finite at outer round {outer}, inner iteration {inner}"
    )]
    Diverged {
        outer: usize,
        inner: usize,
        report: Box<RunReport>,
    },
}

pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(DsplError::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

pub(crate) fn check_finite<T: crate::Scalar>(context: &'static str, values: &[T]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(DsplError::NonFinite(context))
    }
}
