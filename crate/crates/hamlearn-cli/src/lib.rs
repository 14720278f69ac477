//! Config-driven workbench for learning Hamiltonian coefficients from
//! simulated observation series.
//!
//! Every run is declared by a TOML config file; subcommands pick the
//! sections they need. Outputs (datasets, predictor bundles, report
//! tables) are byte-reproducible functions of the config and master
//! seed. On success the last stdout line is a single machine-parsable
//! `RESULT <command> key=value ...` summary.
//!
//! Exit codes: 2 config error, 3 I/O error, 4 training divergence,
//! 5 metadata/family mismatch.

use std::fmt;

pub mod commands;
pub mod config;

#[derive(Debug)]
pub enum CliError {
    /// Invalid or inconsistent configuration. Exit code 2.
    Config(String),
    /// Filesystem or file-format failure. Exit code 3.
    Io(String),
    /// The training pipeline failed to produce a usable stage. Exit
    /// code 4.
    Divergence(String),
    /// Predictor and dataset/structure metadata disagree. Exit code 5.
    Mismatch(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Divergence(_) => 4,
            CliError::Mismatch(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config: {m}"),
            CliError::Io(m) => write!(f, "io: {m}"),
            CliError::Divergence(m) => write!(f, "training: {m}"),
            CliError::Mismatch(m) => write!(f, "mismatch: {m}"),
        }
    }
}
