use std::path::{Path, PathBuf};

use gridvolterra::IoError;
use serde_json::json;
use thiserror::Error;

/// Errors reported by the command line, with a stable `kind` for the JSON
/// error document.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("file not found: {}", path.display())]
    FileNotFound { path: PathBuf },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot read {}: {detail}", path.display())]
    BadInput { path: PathBuf, detail: String },
    #[error("cannot write {}: {detail}", path.display())]
    Output { path: PathBuf, detail: String },
    #[error("{stage} failed: {detail}")]
    Stage { stage: &'static str, detail: String },
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::FileNotFound { .. } => "FileNotFound",
            CliError::InvalidConfig(_) => "InvalidConfig",
            CliError::BadInput { .. } => "BadInput",
            CliError::Output { .. } => "OutputError",
            CliError::Stage { .. } => "StageFailed",
        }
    }

    /// 2 for problems with the invocation or its inputs, 1 for failures
    /// while computing or writing.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::FileNotFound { .. } | CliError::InvalidConfig(_) | CliError::BadInput { .. } => 2,
            CliError::Output { .. } | CliError::Stage { .. } => 1,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut body = json!({
            "kind": self.kind(),
            "message": self.to_string(),
        });
        match self {
            CliError::FileNotFound { path } | CliError::BadInput { path, .. } | CliError::Output { path, .. } => {
                body["path"] = json!(path.display().to_string());
            }
            CliError::Stage { stage, .. } => body["stage"] = json!(stage),
            CliError::InvalidConfig(_) => {}
        }
        json!({ "error": body })
    }

    pub fn stage(stage: &'static str, err: impl std::fmt::Display) -> Self {
        CliError::Stage {
            stage,
            detail: err.to_string(),
        }
    }

    /// Classifies a read failure on `path`.
    pub fn reading(path: &Path, err: IoError) -> Self {
        match &err {
            IoError::File { source, .. } if source.kind() == std::io::ErrorKind::NotFound => CliError::FileNotFound {
                path: path.to_path_buf(),
            },
            _ => CliError::BadInput {
                path: path.to_path_buf(),
                detail: err.to_string(),
            },
        }
    }

    pub fn writing(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Output {
            path: path.to_path_buf(),
            detail: err.to_string(),
        }
    }
}

/// Fails with `FileNotFound` unless `path` is an existing file.
pub fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::FileNotFound {
            path: path.to_path_buf(),
        })
    }
}
