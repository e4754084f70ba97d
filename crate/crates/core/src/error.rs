use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("conjugate gradients did not converge after {iterations} iterations (relative residual {residual:e})")]
    CgNotConverged { iterations: usize, residual: f64 },

    #[error("line search failed in cell minimization after {iterations} iterations (gradient norm {gradient_norm:e})")]
    LineSearch { iterations: usize, gradient_norm: f64 },

    #[error("nonlinear step failed at t = {time}: residual {residual:e} after {iterations} iterations")]
    StepFailure { time: f64, residual: f64, iterations: usize },

    #[error("grid too large: {0}")]
    GridTooLarge(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config error:\n{}", format_issues(.0))]
    Config(Vec<ConfigIssue>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// One problem found while reading a config file.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(|i| match i.line {
            Some(l) => format!("  line {}: {}: {}", l, i.path, i.message),
            None => format!("  {}: {}", i.path, i.message),
        })
        .collect::<Vec<_>>()
        .join("\n")
}
