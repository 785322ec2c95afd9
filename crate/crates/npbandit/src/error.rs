//! Error taxonomy shared by every module.
//!
//! The variants mirror the failure classes of the numerical pipeline: bad
//! caller input, singular or ill-conditioned linear systems, instances that
//! make the target quantity undefined, and violated structural assumptions.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller input outside the documented domain (includes dimension mismatches).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A linear solve or eigendecomposition failed or is too ill-conditioned to trust.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// The instance makes the requested quantity undefined (e.g. M*r = 0 on the unit ball).
    #[error("degenerate instance: {0}")]
    DegenerateInstance(String),

    /// No candidate aligns with a designed query direction well enough.
    #[error(
        "collinearity assumption violated at direction {index}: achieved c^2 = {achieved:.6e} < threshold {threshold:.6e}"
    )]
    AssumptionViolated {
        index: usize,
        achieved: f64,
        threshold: f64,
    },

    /// Cover construction ran out of its point budget before the probe check passed.
    #[error("coverage failure: {0}")]
    CoverageFailure(String),

    /// A quantitative lemma check failed; carries the observed and allowed values.
    #[error("lemma violation: observed {observed:.6e} exceeds bound {bound:.6e}")]
    LemmaViolation { observed: f64, bound: f64 },

    /// Malformed or inconsistent experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::NumericalFailure(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
