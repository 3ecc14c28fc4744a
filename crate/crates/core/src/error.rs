use thiserror::Error;

use crate::field::BasisKind;

#[derive(Debug, Error)]
pub enum PalsError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("singular basis {index}: {reason}")]
    SingularBasis { index: usize, reason: String },

    #[error("unsupported basis kind for this operation: {0}")]
    UnsupportedKind(BasisKind),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("log-det barrier violated by basis {index} (det = {det:e})")]
    BarrierViolation { index: usize, det: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PalsError {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            PalsError::SingularBasis { .. } | PalsError::BarrierViolation { .. } | PalsError::Numerical(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, PalsError>;
