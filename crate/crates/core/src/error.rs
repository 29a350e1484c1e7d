use thiserror::Error;

/// Errors raised by the solver, engine and tooling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("LᵀL + εI is singular; use a positive jitter")]
    SingularSystem,

    #[error("non-finite value in sample {position} at coordinate {index}")]
    NonFiniteInput { position: u64, index: usize },

    #[error("non-finite surrogate value at t = {t}")]
    NonFiniteSurrogate { t: u64 },

    #[error("oracle exceeded its time budget")]
    TimeBudgetExceeded,

    #[error("checkpoint mode tag {found} does not match the configured mode {expected}")]
    ModeMismatch { expected: u8, found: u8 },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Failures specific to reading a checkpoint file.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { expected: u16, found: u16 },

    #[error("checkpoint is truncated: {0}")]
    Truncated(String),

    #[error("checkpoint checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
