//! Benchmark harness for kernel-based equation learning.
//!
//! The library half of the `keql` binary. It generates the three benchmark
//! datasets (a forced Duffing oscillator, viscous Burgers flow, and a Darcy
//! diffusion problem), runs the two-step and one-step recovery pipelines on
//! them, scores the results with relative squared-error metrics, and writes
//! CSV/JSON artifacts for external plotting.

pub mod config;
pub mod duffing;
pub mod metrics;

use std::process::ExitCode;

/// Errors raised by dataset generation, pipeline runs and artifact output.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// The configuration file failed to parse or validate.
    #[error("config error: {0}")]
    Config(String),

    /// A fitting or linear-algebra step failed.
    #[error("solver error: {0}")]
    Solver(#[from] keql::Error),

    /// Artifact input/output failed.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// The process exit code promised by the CLI contract: 2 for bad
    /// configuration, 3 for solver failures (IO is grouped with solver
    /// failures since the run itself was valid).
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Solver(_) | CliError::Io(_) => ExitCode::from(3),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
