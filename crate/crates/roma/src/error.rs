//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide error enum. Variants mirror the failure modes of the
/// statistical pipeline: shape problems, degenerate inputs, numerical
/// breakdown, and configuration mistakes.
#[derive(Debug, Error)]
pub enum RomaError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("matrix not symmetric: {0}")]
    Symmetry(String),
    #[error("regularization too small: {0}")]
    RegularizationTooSmall(String),
    #[error("saturated model: {0}")]
    SaturatedModel(String),
    #[error("tuning failed: {0}")]
    TuningFailed(String),
    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),
    #[error("degenerate contrast: {0}")]
    DegenerateContrast(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RomaError>;

impl RomaError {
    /// Process exit code for the CLI front end: 2 for configuration
    /// problems, 3 for data problems, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        use RomaError::*;
        match self {
            Config(_) => 2,
            Data(_) | Grid(_) | TypeMismatch(_) | Dimension(_) | EmptyInput(_) | Io(_) => 3,
            _ => 4,
        }
    }
}
