use thiserror::Error;

/// Failure of a CLI command, mapped onto the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
    /// A command ran to completion but one of its checks failed.
    #[error("validation failed: {0}")]
    Validation(String),
}

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config { field: field.into(), message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config { .. } | CliError::Usage(_) => 2,
            CliError::Validation(_) => 3,
        }
    }
}

impl From<ising_factor::Error> for CliError {
    fn from(e: ising_factor::Error) -> Self {
        use ising_factor::Error as E;
        match e {
            E::Parameter { field, message } => CliError::Config { field, message },
            E::Lookup(_) | E::Input(_) => CliError::Usage(e.to_string()),
            E::Numerical(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
