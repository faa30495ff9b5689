//! Experiment runner: TOML configurations, scenario presets, runs, sweeps
//! and property verification on top of [`sigmalab`].

pub mod baselines;
pub mod config;
pub mod run;
pub mod scenario;
pub mod sweep;
pub mod verify;

use std::fmt;

pub use config::{ConfigError, ExperimentConfig, Scenario, Scheme};
pub use scenario::{resolve, Experiment};

/// Environment variable naming the root of relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "SIGMALAB_OUTPUT_ROOT";

/// Errors of the runner, each with its process exit code.
#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    /// The solver stopped without meeting its tolerance; artifacts were written.
    NonConvergence { scheme: String, residual: f64 },
    /// A property suite failed.
    Failed(String),
    Numerics(sigmalab::Error),
    Io(std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::NonConvergence { .. } => 3,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => e.fmt(f),
            CliError::NonConvergence { scheme, residual } => {
                write!(f, "{scheme} did not converge (final residual {residual:e})")
            }
            CliError::Failed(m) => f.write_str(m),
            CliError::Numerics(e) => write!(f, "numerical error: {e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<sigmalab::Error> for CliError {
    fn from(e: sigmalab::Error) -> Self {
        CliError::Numerics(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Numerics(e.into())
    }
}
