use std::fmt;

/// Errors raised by the solvers, the primitives and the file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A primitive was evaluated outside its domain (nonpositive consumption,
    /// an investment ratio outside the capital-production domain, ...).
    #[error("domain error in {what}: {detail}")]
    Domain { what: &'static str, detail: String },

    /// Invalid configuration: parameters, grids, file contents.
    #[error("configuration error: {0}")]
    Config(String),

    /// A nonlinear solve or fixed-point iteration failed.
    #[error("convergence failure in {stage}: {detail}")]
    Convergence { stage: String, detail: String },

    /// A post-solve invariant did not hold.
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// Checkpoint or manifest is corrupt, truncated or of an unknown version.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(what: &'static str, detail: impl fmt::Display) -> Self {
        Error::Domain {
            what,
            detail: detail.to_string(),
        }
    }

    pub(crate) fn convergence(stage: impl Into<String>, detail: impl fmt::Display) -> Self {
        Error::Convergence {
            stage: stage.into(),
            detail: detail.to_string(),
        }
    }
}
