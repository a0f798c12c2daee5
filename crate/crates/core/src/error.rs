use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("variable count mismatch: {0}")]
    VariableMismatch(String),
    #[error("index {index} out of range (m = {m})")]
    IndexOutOfRange { index: usize, m: usize },
    #[error("parse error at {offset}: {message} (token `{token}`)")]
    Parse {
        offset: usize,
        token: String,
        message: String,
    },
    #[error("potential is not self-adjoint: {0}")]
    NotSelfAdjoint(String),
    #[error("sampler failed: {0}")]
    Sampler(String),
    #[error("fixed-point iteration did not converge after {iterations} steps (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("transport stage {stage} failed: {message}")]
    Stage { stage: usize, message: String },
}
