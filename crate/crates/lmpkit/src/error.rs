//! CLI-facing error type with a machine-readable JSON form.

use std::fmt;

/// Errors surfaced by commands. Every variant serializes to a JSON error
/// object so scripted callers never have to parse prose.
#[derive(Debug)]
pub enum CliError {
    /// Malformed or invalid configuration; `path` is a JSON pointer to the
    /// offending key when one is known.
    Config { message: String, path: Option<String> },
    /// Filesystem or format problem.
    Io { message: String },
    /// Error bubbled up from the core library.
    Core(lmpkit_core::Error),
}

impl CliError {
    pub fn io(context: &str, err: impl fmt::Display) -> Self {
        CliError::Io {
            message: format!("{context}: {err}"),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Io { .. } => "io",
            CliError::Core(_) => "core",
        }
    }

    /// The JSON error object printed on failure.
    pub fn to_json(&self) -> serde_json::Value {
        let mut obj = serde_json::json!({
            "kind": self.kind(),
            "message": self.to_string(),
        });
        if let CliError::Config { path: Some(p), .. } = self {
            obj["path"] = serde_json::Value::String(p.clone());
        }
        serde_json::json!({ "error": obj })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config { message, path } => match path {
                Some(p) => write!(f, "config error at {p}: {message}"),
                None => write!(f, "config error: {message}"),
            },
            CliError::Io { message } => write!(f, "io error: {message}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<lmpkit_core::Error> for CliError {
    fn from(e: lmpkit_core::Error) -> Self {
        CliError::Core(e)
    }
}
