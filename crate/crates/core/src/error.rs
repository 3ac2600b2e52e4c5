use thiserror::Error;

/// Errors raised by the estimators, oracles and the experiment harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {what} (expected {expected}, got {got})")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix is singular or ill-conditioned: {0}")]
    Singular(String),

    #[error("closed-form moments are unavailable for a nonlinear first stage")]
    NonlinearFamily,

    #[error("missing theory constant `{0}`")]
    MissingConstant(&'static str),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("internal state corrupted: {0}")]
    Corrupted(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            what,
            expected,
            got,
        })
    }
}
