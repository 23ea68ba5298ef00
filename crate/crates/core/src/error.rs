use thiserror::Error;

/// Errors raised by integrator construction, integration legs and tuning.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// The kernel parameter makes `6b - 1` vanish, so `a = b / (6b - 1)` is undefined.
    #[error("degenerate kernel parameter b = {0} (6b - 1 vanishes)")]
    DegenerateParameter(f64),

    #[error("non-finite value in phase state")]
    NonFiniteState,

    #[error("kernel is linearly unstable at step size h = {0}")]
    UnstableStep(f64),

    #[error("leg needs at least {required} steps, got {got}")]
    InsufficientSteps { required: usize, got: usize },

    #[error("optimizer cannot start: initial objective is not finite")]
    NoDescent,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
