use std::io;

use crate::estimator::FitResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A value outside the domain of a conversion, e.g. a non-positive concentration.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("synchronization failed: {0}")]
    SyncFailure(String),

    #[error("window overrun: need data up to t = {needed_s} s, trace ends at t = {available_s} s")]
    WindowOverrun { needed_s: f64, available_s: f64 },

    #[error("parameters not identifiable: {0}")]
    Identifiability(String),

    /// Every local search stopped without meeting its tolerance. The best
    /// result found is still attached.
    #[error("fit did not converge (best rss = {})", .0.rss)]
    NonConvergence(Box<FitResult>),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
