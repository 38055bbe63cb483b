use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Requested dimension is outside the supported range of the
    /// embedded direction-number table (or of an exact algorithm).
    #[error("unsupported dimension {dim}: {reason}")]
    UnsupportedDimension { dim: usize, reason: String },

    /// A coordinate sits on (or within 2^-32 of) the unit-cube boundary,
    /// where the logit map is singular. Callers clamp or skip.
    #[error("boundary input: coordinate {index} = {value} is within 2^-32 of {{0,1}}")]
    BoundaryInput { index: usize, value: f64 },

    /// Derivative order outside the implemented range.
    #[error("unsupported derivative order {order} (expected 1 or 2)")]
    UnsupportedOrder { order: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A non-finite loss or gradient was produced during training.
    #[error("training diverged at step {step}: {what}")]
    TrainingDiverged { step: usize, what: String },

    /// A step map of the discretized flow has a singular Jacobian, which
    /// invalidates the transported density.
    #[error("degenerate step Jacobian at ODE step {step} (|det| = 0)")]
    DegenerateStep { step: usize },

    /// Every importance weight underflowed to zero.
    #[error("degenerate weights: all importance weights underflowed to zero")]
    DegenerateWeights,

    /// A target was asked for i.i.d. draws but provides none.
    #[error("target '{0}' has no sampler")]
    UnsupportedTarget(String),

    #[error("checkpoint version mismatch: found {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint shape mismatch: {0}")]
    CheckpointShape(String),

    #[error("checkpoint truncated or corrupt: {0}")]
    CheckpointCorrupt(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
