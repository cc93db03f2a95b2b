use alloc::string::String;

/// Errors surfaced by the compute core.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value is out of contract (bad probability, unknown
    /// augmentation, unsupported shape, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Tensor shapes handed to an operation do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Training produced a non-finite loss. Carries the state needed to
    /// diagnose the divergence.
    #[error("training diverged at epoch {epoch} step {step}: loss {loss}, lr_f {lr_f}, lr_g {lr_g}, modes attack/cross/clean {modes:?}")]
    Diverged {
        epoch: usize,
        step: usize,
        loss: f32,
        lr_f: f32,
        lr_g: f32,
        modes: [usize; 3],
    },

    /// An operation that needs data got an empty collection.
    #[error("empty input: {0}")]
    Empty(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl core::fmt::Display) -> Self {
        Error::Config(alloc::format!("{msg}"))
    }

    pub fn shape(msg: impl core::fmt::Display) -> Self {
        Error::Shape(alloc::format!("{msg}"))
    }
}
