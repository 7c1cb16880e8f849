use std::fmt;

/// Process exit codes. A finished run exits 0 even when items failed.
pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_ENDPOINT: u8 = 3;

/// An error paired with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn config(error: impl Into<anyhow::Error>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            error: error.into(),
        }
    }

    pub fn endpoint(error: impl Into<anyhow::Error>) -> Self {
        CliError {
            code: EXIT_ENDPOINT,
            error: error.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

/// Anything not classified otherwise is a configuration or I/O problem.
impl From<anyhow::Error> for CliError {
    fn from(error: anyhow::Error) -> Self {
        CliError::config(error)
    }
}

pub type CliResult<T> = Result<T, CliError>;
