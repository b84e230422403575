use thiserror::Error;

/// Errors produced anywhere in the testing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("series too short: need at least {required} observations, got {actual}")]
    SeriesTooShort { required: usize, actual: usize },

    #[error("series length mismatch: x has {x_len} observations, y has {y_len}")]
    LengthMismatch { x_len: usize, y_len: usize },

    #[error("non-finite value at index {index} of {series}")]
    NonFinite { series: &'static str, index: usize },

    #[error("percent change undefined: value {value} at index {index} is not strictly positive")]
    NonPositive { index: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{stage} training diverged at epoch {epoch} (non-finite loss)")]
    TrainingDiverged { stage: &'static str, epoch: usize },

    #[error("simulation diverged at step {step}: |value| exceeded {threshold:e}")]
    SimulationDiverged { step: usize, threshold: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("malformed data at line {line}: {message}")]
    Data { line: usize, message: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure classes used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig(_) | Error::Unsupported(_) => ErrorClass::Usage,
            Error::TrainingDiverged { .. } | Error::SimulationDiverged { .. } => ErrorClass::Numerical,
            Error::Stage { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }

    /// True when the error (possibly wrapped in a stage label) is a simulation divergence.
    pub fn is_simulation_divergence(&self) -> bool {
        match self {
            Error::SimulationDiverged { .. } => true,
            Error::Stage { source, .. } => source.is_simulation_divergence(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
