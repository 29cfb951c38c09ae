//! Experiment runner for single-pull restless bandit policies.
//!
//! A TOML [`ExperimentConfig`] names a domain, a setting `(N, S, K, ρ, T)`,
//! the policies to compare and the evaluation budget. [`run_experiment`]
//! writes `results.csv` and a readable table, [`sweep_rho`] traces the
//! optimality gap as ρ grows, and [`time_policies`] compares wall times.

use std::path::PathBuf;

use thiserror::Error;

pub mod config;
pub mod report;
pub mod runner;

pub use config::{parse_list, parse_seed_range, DomainConfig, ExperimentConfig, Overrides};
pub use runner::{
    export_instances, log_log_slope, run_experiment, sweep_rho, sweep_rho_with, time_policies, ExperimentReport, GapPoint, ResultRow,
    SweepReport, TimingRow,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver failure on instance {seed}: {message}{}", replay_note(.replay))]
    Solver { seed: u64, message: String, replay: Option<PathBuf> },
    #[error("constraint audit failed for {policy} on instance {seed}: {detail}")]
    Audit { seed: u64, policy: String, detail: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn replay_note(path: &Option<PathBuf>) -> String {
    path.as_ref().map(|p| format!(" (instance saved to {})", p.display())).unwrap_or_default()
}

impl RunError {
    /// Process exit code: 2 config, 3 solver, 4 constraint audit, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => 2,
            RunError::Solver { .. } => 3,
            RunError::Audit { .. } => 4,
            RunError::Io(_) | RunError::Csv(_) => 1,
        }
    }
}
