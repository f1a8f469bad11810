use std::fmt;
use std::path::Path;

/// Error carrying the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: msg.into(),
        }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERICAL,
            message: msg.into(),
        }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {err}", path.display()),
        }
    }

    /// Prefixes the message with the config section it came from.
    pub fn within(mut self, section: &str) -> Self {
        if self.code == EXIT_CONFIG {
            self.message = format!("{section}: {}", self.message);
        }
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<bayes_ltv::Error> for CliError {
    fn from(e: bayes_ltv::Error) -> Self {
        use bayes_ltv::Error as E;
        let code = match &e {
            E::InvalidArgument(_) | E::DimensionMismatch(_) => EXIT_CONFIG,
            E::Numerical(_) => EXIT_NUMERICAL,
            E::Io { .. } | E::Parse(_) => EXIT_IO,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
