use std::fmt;
use std::path::Path;

use serde_json::json;

/// Error surfaced to the user as `{"error": {"kind", "message"}}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: String,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(kind: impl Into<String>, message: impl Into<String>) -> Self {
        CliError {
            kind: kind.into(),
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config", message)
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new("usage", message)
    }

    /// A stage ran before the stage that produces `path`.
    pub fn missing_artifact(path: &Path, producer: &str) -> Self {
        Self::new(
            "missing_artifact",
            format!("missing artifact {}; run `bugloc {producer}` first", path.display()),
        )
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::new("io", format!("{}: {err}", path.display()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({ "error": { "kind": self.kind, "message": self.message } })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<bugloc_core::Error> for CliError {
    fn from(e: bugloc_core::Error) -> Self {
        CliError::new(e.kind(), e.to_string())
    }
}
