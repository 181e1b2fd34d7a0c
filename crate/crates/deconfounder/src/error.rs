use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("spec error: {0}")]
    Spec(String),

    #[error("divergence at iteration {iteration}: {message}")]
    Divergence { iteration: usize, message: String },

    #[error("rank-deficient system: {0}")]
    RankDeficient(String),

    #[error("non-convergence: {0}")]
    NonConvergence(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for usage problems, 3 for
    /// numerical failures, 1 is reserved for check failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Schema(_)
            | Error::Parse { .. }
            | Error::Validation(_)
            | Error::Argument(_)
            | Error::Spec(_)
            | Error::Dimension(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => 2,
            Error::Divergence { .. } | Error::RankDeficient(_) | Error::NonConvergence(_) => 3,
        }
    }
}
