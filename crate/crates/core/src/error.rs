use alloc::string::String;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("alignment error: source has {source_lines} lines but target has {target_lines}")]
    Alignment {
        source_lines: usize,
        target_lines: usize,
    },
    #[error("line {line} is blank on one side only")]
    OneSidedBlank { line: usize },
    #[error("dimension mismatch for `{token}`: expected {expected}, found {found}")]
    Dimension {
        token: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
}

pub type Result<T> = core::result::Result<T, Error>;
