use thiserror::Error;

use crate::linsolve::SolveReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("linear solve did not converge after {} iterations (residual {:.3e}): {reason}", report.iterations, report.final_residual)]
    SolveFailed { report: SolveReport, reason: String },

    #[error("dense oracle: {0}")]
    Oracle(String),

    #[error("monitor abort at step {step}: {message}")]
    MonitorAbort { step: usize, message: String },

    #[error("config error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("invalid config field `{field}`: {message}")]
    ConfigInvalid { field: String, message: String },

    #[error("undefined convergence order: {0}")]
    UndefinedOrder(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed file: {message}")]
    Format { path: String, message: String },
}
