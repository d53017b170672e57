use thiserror::Error;

/// Exit status for usage errors.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for numerical failures and failed verdicts.
pub const EXIT_NUMERICAL: i32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Numerical(#[from] genfrac_core::Error),
    #[error("verdict failed: {0}")]
    Verdict(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use genfrac_core::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numerical(E::InvalidParameter(_) | E::Parse(_) | E::Shape(_)) => EXIT_USAGE,
            _ => EXIT_NUMERICAL,
        }
    }
}
