use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<petbd::Error> for CliError {
    fn from(e: petbd::Error) -> Self {
        use petbd::Error::*;
        match e {
            Numerical { .. } | DegenerateInput(_) | NotOnSimplex { .. } | NonFinite { .. } => {
                CliError::Numeric(e.to_string())
            }
            GridMismatch { .. } | InvalidShape(_) | InvalidArgument(_) => {
                CliError::Config(e.to_string())
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
