use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("degenerate region: {0}")]
    DegenerateRegion(String),

    #[error("position ({range:.3} m, {depth:.3} m) lies outside the region")]
    OutsideRegion { range: f64, depth: f64 },

    #[error("receiver coincides with the transmitter")]
    ReceiverAtSource,

    #[error("ray step of {0} m produces no displacement")]
    StepUnderflow(f64),

    #[error("launch angle {0}° must satisfy |angle| < 90°")]
    LaunchAngle(f64),

    #[error("covariance factorization failed: {0}")]
    Factorization(String),

    #[error("degenerate reference: {0}")]
    Degenerate(String),

    #[error("{path}: {message}")]
    Table { path: PathBuf, message: String },

    #[error("missing column `{column}` in {path}")]
    MissingColumn { path: PathBuf, column: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
