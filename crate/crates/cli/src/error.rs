use std::fmt;
use std::path::Path;

/// Failure classes mapped to process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or config values (exit 1).
    Usage(String),
    /// Unreadable, malformed or insufficient input data (exit 2).
    Data(String),
    /// Anything that indicates a bug (exit 3).
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches the offending file to a data error.
pub trait DataContext<T> {
    fn at(self, path: &Path) -> CliResult<T>;
    fn context(self, what: &str) -> CliResult<T>;
}

impl<T, E: fmt::Display> DataContext<T> for Result<T, E> {
    fn at(self, path: &Path) -> CliResult<T> {
        self.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    fn context(self, what: &str) -> CliResult<T> {
        self.map_err(|e| CliError::Data(format!("{what}: {e}")))
    }
}
