use thiserror::Error;

/// Failure of a CLI command, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<rappca_core::Error> for CliError {
    fn from(e: rappca_core::Error) -> Self {
        use rappca_core::Error as E;
        let msg = e.to_string();
        match e {
            E::Parameter(_) => CliError::Config(msg),
            E::Input(_) | E::Data(_) | E::Io(_) | E::Csv(_) => CliError::Data(msg),
            E::Rank(_) | E::Numerical(_) => CliError::Numerical(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("i/o error: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(format!("csv error: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;
