use std::path::PathBuf;

use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] spinprobe::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    /// A check mode found violations.
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Config(_) => "config",
            CliError::Parse { .. } => "parse",
            CliError::Io { .. } => "io",
            CliError::Csv(_) => "csv",
            CliError::Json(_) => "json",
            CliError::Check(_) => "check",
        }
    }

    /// 2 for bad input, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Parse { .. } => 2,
            CliError::Core(spinprobe::Error::Config(_)) => 2,
            _ => 1,
        }
    }

    /// Machine-readable error record written to stderr on failure.
    pub fn record(&self) -> serde_json::Value {
        json!({
            "error": {
                "kind": self.kind(),
                "message": self.to_string(),
                "exit_code": self.exit_code(),
            }
        })
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_carry_kind_and_exit_code() {
        let e = CliError::Config("no time".into());
        let r = e.record();
        assert_eq!(r["error"]["kind"], "config");
        assert_eq!(r["error"]["exit_code"], 2);

        let e: CliError = spinprobe::Error::Numeric("nan".into()).into();
        assert_eq!(e.kind(), "numeric");
        assert_eq!(e.exit_code(), 1);
    }
}
