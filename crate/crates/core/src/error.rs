use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by depth construction, solvers, estimators and file IO.
#[derive(Debug, Error)]
pub enum DepthError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{context}: vector is not of unit length (norm {norm})")]
    NotUnit { context: &'static str, norm: f64 },

    #[error("{context}: matrix columns are not orthonormal (max deviation {deviation:e})")]
    NotStiefel {
        context: &'static str,
        deviation: f64,
    },

    #[error("{context}: direction is not admissible (residual {residual:e})")]
    InadmissibleDirection {
        context: &'static str,
        residual: f64,
    },

    #[error("{context}: non-finite value encountered")]
    NonFinite { context: &'static str },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("rank of the candidate is {found}, expected {expected}")]
    RankMismatch { expected: usize, found: usize },

    #[error("support size of the candidate is {found}, expected {expected}")]
    SupportMismatch { expected: usize, found: usize },

    #[error("slack assignment is infeasible: {0}")]
    InfeasibleSlack(String),

    #[error("influence set is empty")]
    EmptyInfluenceSet,

    #[error("direction space has dimension zero")]
    EmptyDirectionSpace,

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl DepthError {
    /// True for errors caused by malformed input rather than by a failing computation.
    pub fn is_validation(&self) -> bool {
        !matches!(self, DepthError::Numeric(_) | DepthError::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, DepthError>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(DepthError::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}

pub(crate) fn check_finite<'a>(
    context: &'static str,
    values: impl IntoIterator<Item = &'a f64>,
) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(DepthError::NonFinite { context })
    }
}
