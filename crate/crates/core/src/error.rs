use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("time {time} is not on the sampling grid")]
    OffGrid { time: f64 },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("{file}:{line}: {message}")]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("simulation blew up at step {step}: {detail}")]
    BlowUp { step: usize, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("query time {time} lies outside the observed span [{start}, {end}]")]
    Extrapolation { time: f64, start: f64, end: f64 },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("collinear design for pair {src} -> {dst}")]
    Collinear { src: usize, dst: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
