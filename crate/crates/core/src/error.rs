use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration or call parameter is outside its valid range.
    #[error("invalid parameter `{field}`: {message}")]
    Parameter { field: String, message: String },
    #[error("unknown vertex label {0:?}")]
    Lookup(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn parameter(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parameter { field: field.into(), message: message.into() }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Error::Input(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
