//! Error type shared across the toolkit.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, FogError>;

#[derive(Debug, Error)]
pub enum FogError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed content in an input file, with the 1-based line it came from.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// File-level layout problems: wrong header, wrong column count, bad magic.
    #[error("format error: {0}")]
    Format(String),

    /// Violated structural invariants: non-monotone timestamps, shape
    /// mismatches, stale caches.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("config error: {0}")]
    Config(String),

    /// Numeric failure during training or evaluation (non-finite loss or
    /// gradient, divergence).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A requested statistic is undefined on this input (e.g. AUC with a
    /// single class present).
    #[error("undefined: {0}")]
    Undefined(String),
}

impl FogError {
    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            FogError::Config(_) => 2,
            FogError::Numeric(_) => 4,
            _ => 3,
        }
    }
}
