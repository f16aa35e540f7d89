use thiserror::Error;

/// Errors raised by the numerical modules.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Parameter outside the domain required by the theory or the algorithm.
    #[error("domain error: {0}")]
    Domain(String),
    /// Request exceeds what an object can evaluate (e.g. derivative order).
    #[error("capability error: {0}")]
    Capability(String),
    /// Least-squares fit could not be formed.
    #[error("fit error: {0}")]
    Fit(String),
    /// Discretization does not resolve the requested quantity.
    #[error("resolution error: {0}")]
    Resolution(String),
    /// Mode or box truncation would corrupt the result.
    #[error("truncation error: {0}")]
    Truncation(String),
    /// Sampled function is not negligible at the edge of its window.
    #[error("support error: {0}")]
    Support(String),
    /// Inconsistent numerical configuration.
    #[error("configuration error: {0}")]
    Configuration(String),
    /// Linear algebra failure.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// Energy below the minimum of the potential.
    #[error("empty level set: {0}")]
    EmptyLevelSet(String),
}

impl Error {
    /// True for errors that signal an under-resolved or truncated discretization.
    pub fn is_resolution(&self) -> bool {
        matches!(self, Error::Resolution(_) | Error::Truncation(_) | Error::Support(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
