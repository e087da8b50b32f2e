use std::io;

use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("mode range: {0}")]
    ModeRange(String),

    #[error("invalid volume fraction {value} at cell {index} (must lie in [0, 1])")]
    InvalidFraction { index: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("generation: {0}")]
    Generation(String),

    #[error("stability: CFL number {cfl:.4} exceeds 1")]
    Stability { cfl: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("malformed simulation: {0}")]
    MalformedSimulation(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("checkpoint error at byte {offset}: {message}")]
    Checkpoint { offset: u64, message: String },

    #[error("degenerate target: sample {sample} has zero norm")]
    DegenerateTarget { sample: usize },

    #[error("degenerate variance: truth field is constant")]
    DegenerateVariance,

    #[error("degenerate norm: truth field has zero norm")]
    DegenerateNorm,

    #[error("optimizer: tensor `{tensor}`: {message}")]
    Optimizer { tensor: String, message: String },

    #[error("split: {0}")]
    Split(String),

    #[error("training diverged at epoch {epoch}, batch {batch} (loss = {loss})")]
    Divergence {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
