use std::fmt;
use std::path::Path;

/// Exit status for a failed command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    /// Bad arguments, configs or inputs; nothing was written.
    Validation = 2,
    Numerical = 3,
    /// Anything else (I/O failures while writing, ...).
    Runtime = 1,
}

#[derive(Debug)]
pub struct CliError {
    pub exit: Exit,
    pub message: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self { exit: Exit::Validation, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self { exit: Exit::Runtime, message: message.into() }
    }

    /// Prefixes the message with where it happened.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }

    pub fn read(path: &Path, err: std::io::Error) -> Self {
        Self::validation(format!("cannot read {}: {err}", path.display()))
    }

    pub fn write(path: &Path, err: impl fmt::Display) -> Self {
        Self::runtime(format!("cannot write {}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<asrfuse_core::Error> for CliError {
    fn from(e: asrfuse_core::Error) -> Self {
        let exit = if e.is_numerical() {
            Exit::Numerical
        } else if matches!(e, asrfuse_core::Error::Io(_)) {
            Exit::Runtime
        } else {
            Exit::Validation
        };
        Self { exit, message: e.to_string() }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

/// Attaches context to core results.
pub trait Context<T> {
    fn ctx(self, what: impl fmt::Display) -> CliResult<T>;
}

impl<T, E: Into<CliError>> Context<T> for std::result::Result<T, E> {
    fn ctx(self, what: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| e.into().context(what))
    }
}
