use thiserror::Error;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// A caller broke an operation's contract (non-scalar root, values out of range, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Invalid configuration or experiment spec.
    #[error("configuration error: {0}")]
    Config(String),
    /// Inconsistent dataset or stream contents.
    #[error("data error: {0}")]
    Data(String),
    /// Malformed input file.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    /// Operation called on a model in the wrong lifecycle state.
    #[error("state error: {0}")]
    State(String),
    /// Evaluation requested on degenerate input.
    #[error("evaluation error: {0}")]
    Eval(String),
    /// Training produced a non-finite loss; carries the last completed task.
    #[error("numerical divergence: {0}")]
    Diverged(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
