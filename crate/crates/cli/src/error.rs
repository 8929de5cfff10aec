use std::fmt;
use std::path::Path;

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_FORMAT: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn format(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_FORMAT,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::input(format!("{}: {e}", path.display()))
    }

    /// Prefixes the message with some context.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ndtmc::Error> for CliError {
    fn from(e: ndtmc::Error) -> Self {
        let code = if e.is_format_error() {
            EXIT_FORMAT
        } else if matches!(e, ndtmc::Error::Numerical(_)) {
            EXIT_NUMERICAL
        } else {
            EXIT_INPUT
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            Self::input(e.to_string())
        } else {
            Self::format(format!("csv: {e}"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_errors_map_to_exit_codes() {
        let bad_magic = ndtmc::Error::BadMagic {
            expected: *b"NDMC",
            found: *b"XXXX",
        };
        assert_eq!(CliError::from(bad_magic).code, EXIT_FORMAT);
        assert_eq!(CliError::from(ndtmc::Error::Numerical("nan".into())).code, EXIT_NUMERICAL);
        assert_eq!(CliError::from(ndtmc::Error::UnknownId(3)).code, EXIT_INPUT);
    }
}
