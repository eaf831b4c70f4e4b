use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("non-finite value in {context} (batch row {row})")]
    NumericOverflow { context: String, row: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("layer used before initialisation: {0}")]
    Uninitialized(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("degenerate data: column {0} is constant")]
    DegenerateColumn(usize),

    #[error("training diverged at iteration {iteration}: {msg}")]
    Diverged { iteration: usize, msg: String },

    #[error("hyperparameter search failed: {0}")]
    SearchFailed(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
