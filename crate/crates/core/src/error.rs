// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the engine.

use std::path::PathBuf;

/// Errors produced by the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible.
    #[error("shape error: {0}")]
    Shape(String),

    /// Input that makes the requested quantity undefined (zero norm, empty set, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Token id outside the vocabulary, or a sequence outside model limits.
    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    /// Invalid model configuration or runtime setting.
    #[error("configuration error: {0}")]
    Config(String),

    /// Execution plan or variant parameters violate a bound.
    #[error("plan error: {0}")]
    Plan(String),

    /// A binary file does not follow its format (bad magic, truncation, bad header).
    #[error("format error: {0}")]
    Format(String),

    /// A file ends before the data its header promises.
    #[error("truncated file: {0}")]
    Truncated(String),

    /// A weight file lacks a required tensor or carries one with the wrong shape.
    #[error("schema error: {0}")]
    Schema(String),

    /// Normalizing against an anchor equal to its baseline.
    #[error("degenerate anchor: anchor {anchor} equals baseline {baseline}")]
    DegenerateAnchor { anchor: f64, baseline: f64 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
