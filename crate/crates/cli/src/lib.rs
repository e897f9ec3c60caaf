//! The `eprb` pipeline: simulate time-tagged experiments, tabulate them
//! into count tables, fit the count models and report the results.
//!
//! Every command writes its outputs atomically and records them, with
//! SHA-256 hashes, in a JSON manifest next to the output.

pub mod commands;
pub mod config;
pub mod files;
pub mod manifest;
pub mod seeds;

pub use commands::{cmd_fit, cmd_report, cmd_simulate, cmd_tabulate, FitArgs, TabulateArgs};
pub use config::PipelineConfig;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const NON_CONVERGENCE: i32 = 2;
    pub const DATA: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("data: {0}")]
    Data(String),

    #[error("fit did not converge: {0}")]
    NonConvergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Io { .. } => exit::USAGE,
            CliError::NonConvergence(_) => exit::NON_CONVERGENCE,
            CliError::Data(_) => exit::DATA,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io { context: context.into(), source }
    }
}

impl From<eprb_core::Error> for CliError {
    fn from(e: eprb_core::Error) -> Self {
        use eprb_core::Error as E;
        match e {
            E::Config(m) => CliError::Config(m),
            E::InvalidInput(m) => CliError::Usage(m),
            E::DataInconsistency(_) | E::Degenerate(_) => CliError::Data(e.to_string()),
            E::Divergence { .. } => CliError::NonConvergence(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
