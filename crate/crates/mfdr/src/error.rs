use mfdr_core::Error as CoreError;

/// Command failure, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration or input files (exit 1).
    #[error("{0}")]
    Validation(String),
    /// A solver failed or produced non-finite values (exit 2).
    #[error("{0}")]
    Numerical(String),
    /// A check ran and failed (exit 3).
    #[error("{0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::InvalidArgument(_)
            | CoreError::DimensionMismatch { .. }
            | CoreError::NotStochastic { .. }
            | CoreError::NegativeEntry { .. }
            | CoreError::Reducible { .. }
            | CoreError::UncenteredForcing { .. }
            | CoreError::EnumerationTooLarge { .. }
            | CoreError::Configuration(_) => CliError::Validation(msg),
            _ => CliError::Numerical(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(format!("i/o: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Validation(format!("csv: {e}"))
    }
}
