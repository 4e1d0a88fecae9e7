use std::io;

use thiserror::Error;

/// Errors surfaced by the linkage engine.
#[derive(Debug, Error)]
pub enum LinkError {
    /// Input data or comparison schema does not line up.
    #[error("schema error: {0}")]
    Schema(String),

    /// A run or simulation configuration is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A caller broke an operation precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A configured resource cap would be exceeded.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// The computation degenerated (e.g. non-finite likelihood).
    #[error("numerical degeneracy: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = LinkError> = std::result::Result<T, E>;
