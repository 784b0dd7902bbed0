//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// The CLI maps these onto distinct exit codes, so the variants separate
/// configuration mistakes from dead measurement channels and from numerical
/// failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("optode placement error: {0}")]
    Placement(String),

    #[error("launch error: {0}")]
    Launch(String),

    /// Source-detector pairs for which no photon packet was detected.
    /// Dropping such rows silently would desynchronize the measurement
    /// vector from the coupling Jacobian, so replay refuses to proceed.
    #[error("dead measurement channels (source, detector): {0:?}")]
    DeadChannels(Vec<(u32, u32)>),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty field of view: all Jacobian rows are zero")]
    EmptyFov,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code used by the command-line interface.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Placement(_) | Error::Shape(_) => 2,
            Error::DeadChannels(_) => 3,
            Error::Numerical(_) | Error::EmptyFov | Error::Launch(_) => 4,
            Error::Io(_) | Error::Format(_) => 5,
        }
    }
}
