use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("singular propensity at record {index}: {detail}")]
    Singularity { index: usize, detail: String },

    #[error("fitting failed (fold {fold}, action {action}): {detail}")]
    Fit { fold: usize, action: usize, detail: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
