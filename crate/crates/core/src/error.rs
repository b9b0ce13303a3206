use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("ellipsoid center lies inside unsafe half-space {index}")]
    CenterUnsafe { index: usize },

    #[error("value outside domain: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("estimator calibration failed: {0}")]
    Calibration(String),

    #[error("certificate error: {0}")]
    Certificate(String),

    #[error("classification error: {0}")]
    Classification(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Input problems (bad files, bad parameters, integrity failures) as
    /// opposed to failures that happen while computing.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_)
                | Error::Domain(_)
                | Error::Invalid(_)
                | Error::Certificate(_)
                | Error::Schema(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_check(ok: bool, what: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Dimension(what()))
    }
}
