use fracmag_core::FracmagError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config or parameters; nothing was computed.
    #[error("invalid configuration: {0}")]
    Validation(String),
    /// The computation ran but failed (non-convergence, fit residual, bad input data).
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
        }
    }
}

impl From<FracmagError> for CliError {
    fn from(e: FracmagError) -> Self {
        match e {
            FracmagError::Domain(_)
            | FracmagError::Policy(_)
            | FracmagError::UnsupportedKind(_)
            | FracmagError::SupportOverlap { .. }
            | FracmagError::NonLatticeShift(_)
            | FracmagError::NotInterior(_)
            | FracmagError::GridMismatch => CliError::Validation(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Numerical(e.to_string())
    }
}
