//! Machine-readable failure records.

use serde::Serialize;

/// Problems found before any compute starts.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn invalid(message: impl Into<String>) -> anyhow::Error {
    ConfigError(message.into()).into()
}

#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub status: &'static str,
    pub command: String,
    /// `config` for validation failures, `runtime` otherwise.
    pub kind: &'static str,
    pub message: String,
    pub causes: Vec<String>,
}

impl ErrorRecord {
    pub fn new(command: &str, err: &anyhow::Error) -> Self {
        let is_config = err.chain().any(|e| e.is::<ConfigError>());
        ErrorRecord {
            status: "error",
            command: command.to_string(),
            kind: if is_config { "config" } else { "runtime" },
            message: err.to_string(),
            causes: err.chain().skip(1).map(|e| e.to_string()).collect(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.kind == "config" {
            2
        } else {
            1
        }
    }
}
