//! Configuration-driven experiment runner.
//!
//! A run reads one JSON config, validates it, executes the experiment on a
//! dedicated worker pool and writes CSV tables plus `report.json` into the
//! output directory. Every file is written to a temporary sibling first and
//! renamed into place.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod config;
pub mod experiments;
pub mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

pub use config::{ExperimentConfig, ExperimentKind};
pub use report::{CriterionResult, RunReport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] mitograph::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        1
    }
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Loads, validates and runs the experiment at `config_path`.
pub fn run(config_path: &Path, overrides: &Overrides) -> Result<RunReport, CliError> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &overrides.out {
        cfg.output_dir = Some(out.clone());
    }
    cfg.validate()?;
    let workers = match overrides.workers {
        Some(0) => return Err(CliError::Config("--workers must be >= 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    pool.install(|| run_config(&cfg, workers))
}

/// Runs an already validated config.
pub fn run_config(cfg: &ExperimentConfig, workers: usize) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let dir = cfg.output_dir();
    let outcome = experiments::run_experiment(cfg, &dir)?;
    let mut artifacts = outcome.artifacts;
    artifacts.push("report.json".into());
    let report = RunReport {
        config: cfg.clone(),
        workers,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        passed: outcome.criteria.iter().all(|c| c.passed),
        criteria: outcome.criteria,
        artifacts,
    };
    mitograph::export::write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}
