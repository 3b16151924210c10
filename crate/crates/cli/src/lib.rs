//! Command-line harness for `segsearch`: corpus generation, training,
//! gated search runs, ablation sweeps and metric evaluation.

pub mod commands;
pub mod config;
pub mod pipeline;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Engine(#[from] segsearch::Error),

    #[error("config file {path}: {detail}")]
    Config { path: String, detail: String },

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// 2 for usage problems, 1 for everything that failed at runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } => 2,
            CliError::Engine(_) => 1,
        }
    }
}

pub use commands::{execute, Cli};
