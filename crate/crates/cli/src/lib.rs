//! Experiment driver for the `csdro` library.
//!
//! The binary exposes six subcommands — `generate`, `train`, `benchmark`,
//! `worstcase`, `interpret`, and `portfolio` — each driven by a flat
//! key-value config file (see [`config`]) plus the common flags
//! `--config`, `--out`, `--workers`, and `--seed`.
//!
//! Every output CSV starts with a provenance comment line
//! (`# seed=..., config-hash=...`) followed by a header row; rerunning a
//! command with the same config hash reproduces the data rows byte for
//! byte. The one exception is the `wallclock_ms` column of training
//! traces, which records physical time.
//!
//! Exit codes: 0 on success, 1 on a validation error (bad flags, bad
//! config, missing inputs), 2 on a runtime failure (training blow-ups,
//! solver errors, failed writes).

pub mod commands;
pub mod config;
pub mod exp;
pub mod metrics;
pub mod output;

/// Error carrying the process exit code mandated for its class:
/// validation problems exit 1, runtime failures exit 2.
#[derive(Debug)]
pub enum CliError {
    /// The user gave us something unusable: unparseable or inconsistent
    /// config, unknown keys, missing input files, bad dimensions.
    Validation(anyhow::Error),
    /// The run itself failed: solver divergence, numerical errors,
    /// output IO failures.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn validation(err: impl Into<anyhow::Error>) -> Self {
        CliError::Validation(err.into())
    }

    pub fn runtime(err: impl Into<anyhow::Error>) -> Self {
        CliError::Runtime(err.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(e) => write!(f, "validation error: {e:#}"),
            CliError::Runtime(e) => write!(f, "runtime failure: {e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Shorthand for command results.
pub type CliResult<T> = Result<T, CliError>;
