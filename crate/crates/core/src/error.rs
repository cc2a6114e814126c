use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    Asymmetric { asymmetry: f64 },

    #[error("matrix is rank deficient: column {column} has residual norm {norm:e}")]
    RankDeficient { column: usize, norm: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("numerical underflow in sinkhorn (eta = {eta}): {axis} {index} sums to zero")]
    Underflow {
        eta: f64,
        axis: &'static str,
        index: usize,
    },

    #[error("infeasible transport problem: row total {row_total} != column total {col_total}")]
    Infeasible { row_total: f64, col_total: f64 },

    #[error("instance too large for the exact oracle: {0} cells (limit 256)")]
    TooLarge(usize),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point {0} is isolated (zero affinity row)")]
    IsolatedPoint(usize),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NanLoss { epoch: usize, step: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
