use std::fmt;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const CONFIG: u8 = 2;
    pub const IO: u8 = 3;
    pub const DATA: u8 = 4;
    /// A study with too many failed replicates, or a rerun that did not
    /// reproduce its outputs.
    pub const INCOMPLETE: u8 = 6;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        CliError { code, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(exit::CONFIG, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(exit::IO, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(exit::DATA, message)
    }

    pub fn incomplete(message: impl Into<String>) -> Self {
        Self::new(exit::INCOMPLETE, message)
    }

    /// IO failure on `path`.
    pub fn at(path: &std::path::Path, err: impl fmt::Display) -> Self {
        Self::io(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

/// Maps core errors raised while setting up or running a fit.
impl From<spatcount::Error> for CliError {
    fn from(e: spatcount::Error) -> Self {
        use spatcount::Error as E;
        match e {
            E::Data(_) | E::Dimension(_) => CliError::data(e.to_string()),
            _ => CliError::config(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
