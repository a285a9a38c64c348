use std::fmt;
use std::path::Path;

/// A command failure, printed as `qshws: error: <kind>: <message>`.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        // Keep the diagnostic on one line.
        let message = message.into().replace('\n', " ");
        Self { kind, message }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config", message)
    }

    pub fn missing(path: &Path, stage: &str) -> Self {
        Self::new("missing-artifact", format!("{} not found (produced by `{stage}`)", path.display()))
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        Self::new("io", format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<qshws_core::Error> for CliError {
    fn from(e: qshws_core::Error) -> Self {
        use qshws_core::Error as E;
        let kind = match &e {
            E::InvalidParameter { .. } => "invalid-parameter",
            E::Format(_) => "format",
            E::Io(_) => "io",
            _ => "compute",
        };
        CliError::new(kind, e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
