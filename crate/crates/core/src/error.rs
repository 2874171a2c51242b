//! Error type shared by every stage of the pipeline.

use std::path::PathBuf;

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, LasrError>;

/// Errors raised by LASR stages.
#[derive(Debug, Error)]
pub enum LasrError {
    /// Malformed LASR-text input; `line` is 1-based.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Input violates a documented precondition (shape, range, emptiness).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Data carries too little information for the requested fit.
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// A numerical procedure could not produce a usable answer.
    #[error("numerical failure: {0}")]
    Numeric(String),

    /// A configuration value is out of its documented range.
    #[error("configuration error: {0}")]
    Config(String),

    /// Failure inside a named pipeline stage.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<LasrError>,
    },
}

impl LasrError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LasrError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        LasrError::InvalidInput(msg.into())
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        match self {
            LasrError::Stage { .. } => self,
            other => LasrError::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Innermost error, unwrapping stage context.
    pub fn root(&self) -> &LasrError {
        match self {
            LasrError::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code for the CLI: 2 usage/config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            LasrError::Config(_) => 2,
            LasrError::Numeric(_) => 4,
            _ => 3,
        }
    }
}
