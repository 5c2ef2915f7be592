//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or channel mismatch between arrays.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// Invalid configuration (window sizes, ratios, resolutions, ...).
    #[error("configuration error: {0}")]
    Config(String),
    /// Value outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// Violated operation contract (e.g. non-scalar loss).
    #[error("contract error: {0}")]
    Contract(String),
    /// A function expected to be deterministic returned differing values.
    #[error("determinism error: {0}")]
    Determinism(String),
    /// Malformed binary container (grid files, checkpoints).
    #[error("format error: {0}")]
    Format(String),
    /// Checkpoint-specific failure (hash mismatch, truncation).
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    /// Dataset-level inconsistency (counts, missing samples).
    #[error("dataset error: {0}")]
    Dataset(String),
    /// Manifest or config text that does not parse.
    #[error("parse error: {0}")]
    Parse(String),
    /// Bad command-line invocation.
    #[error("usage error: {0}")]
    Usage(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
