// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DpdError>;

#[derive(Debug, Error)]
pub enum DpdError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("row {row}: cannot parse {value:?} as a number")]
    Parse { row: usize, value: String },

    #[error("row {row}: non-finite value {value}")]
    NonFinite { row: usize, value: f64 },

    #[error("no observations selected{0}")]
    EmptySelection(String),

    #[error("unknown column {0:?}")]
    UnknownColumn(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("estimation failed: {0}")]
    FitFailed(String),

    #[error("normalization matrix is singular (condition number {condition:.3e})")]
    SingularMatrix { condition: f64 },

    #[error("degenerate residuals: {0}")]
    Degenerate(String),

    #[error("malformed scenario file, line {line}: {message}")]
    Scenario { line: usize, message: String },

    #[error("malformed critical-value cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

impl DpdError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        DpdError::InvalidInput(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        DpdError::InvalidParameter(msg.into())
    }
}
