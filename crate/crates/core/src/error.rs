use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid value: {0}")]
    Validation(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric overflow at timestep {timestep}")]
    NumericOverflow { timestep: usize },

    #[error("non-finite gradient in parameter tensor {tensor}")]
    NonFiniteGradient { tensor: usize },

    #[error("degenerate pair at index {index}: |actual| + |predicted| = 0")]
    DegeneratePair { index: usize },

    #[error("generation diverged at step {step}")]
    GenerationDiverged { step: usize },

    #[error("model load failed: {0}")]
    Load(String),

    #[error("all {0} grid points failed to train")]
    AllPointsFailed(usize),

    #[error("empty model library")]
    EmptyLibrary,

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
