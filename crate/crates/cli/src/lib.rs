//! Orchestration for the prediction pipeline: config parsing, staged
//! execution, and artifact emission. The binary in `main.rs` is a thin
//! wrapper over these modules so integration tests can drive the same code
//! in-process.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod report;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage { .. } => 3,
        }
    }

    pub fn stage(stage: &'static str, err: impl std::fmt::Display) -> Self {
        CliError::Stage {
            stage,
            message: err.to_string(),
        }
    }
}
