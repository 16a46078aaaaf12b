use thiserror::Error;

/// Failures raised by the particle engine and the critic machinery.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmcError {
    /// Every pre-resampling weight was `-inf`.
    #[error("degenerate particle system: all {population} weights are -inf")]
    Degenerate { population: usize },
    #[error("critic returned a non-finite value ({value}) at timestep {t}")]
    CriticFailure { t: usize, value: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
}

pub type Result<T, E = SmcError> = std::result::Result<T, E>;
