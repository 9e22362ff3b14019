use thiserror::Error;

use crate::data::ModelParams;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Malformed data: shapes, non-finite entries, too few rows.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An argument outside the domain of a function (σ² ≤ 0, NaN, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid hyperparameters.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The fit collapsed: σ² hit its floor, every density weight underflowed,
    /// or the residuals vanished. Carries the last valid iterate when one
    /// exists.
    #[error("degenerate fit: {reason}")]
    DegenerateFit { reason: String, last_params: Option<Box<ModelParams>> },
}

impl Error {
    pub(crate) fn degenerate(reason: impl Into<String>) -> Self {
        Error::DegenerateFit { reason: reason.into(), last_params: None }
    }

    pub(crate) fn with_last_params(self, params: &ModelParams) -> Self {
        match self {
            Error::DegenerateFit { reason, .. } => {
                Error::DegenerateFit { reason, last_params: Some(Box::new(params.clone())) }
            }
            other => other,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self, Error::DegenerateFit { .. })
    }
}
