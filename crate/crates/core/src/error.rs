//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: no rows")]
    NoRows { path: PathBuf },

    #[error("{path}: ragged row at line {line}: expected {expected} columns, found {found}")]
    RaggedRow {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{path}: line {line}, column {column}: cannot parse {cell:?} as a finite number")]
    BadCell {
        path: PathBuf,
        line: usize,
        column: usize,
        cell: String,
    },

    #[error("no columns")]
    NoColumns,

    #[error("column {name:?} has length {len}, expected {expected}")]
    ColumnLengthMismatch {
        name: String,
        len: usize,
        expected: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("step index {index} out of range for {len} steps")]
    StepOutOfRange { index: usize, len: usize },

    #[error("no valid frames: mask has no set bits")]
    EmptyMask,

    #[error("SNR undefined at step {step}: zero accumulated noise")]
    ZeroNoise { step: usize },

    #[error("{band} band has zero reference energy")]
    ZeroBandEnergy { band: &'static str },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}
