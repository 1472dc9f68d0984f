//! Config-driven front end for `renv-core`: loads an experiment, runs a
//! verification suite or simulation, and writes JSON-lines reports and CSV data.

pub mod config;
pub mod fixtures;
pub mod output;
mod suites;

use std::path::{Path, PathBuf};

use config::{Action, ConfigError, ExperimentConfig, ModelConfig};
use output::Outcome;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid config: {0}")]
    Config(#[from] ConfigError),
    #[error("run failed: {0:#}")]
    Runtime(#[from] anyhow::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Runtime(_) => 1,
        }
    }
}

/// Runs one experiment in memory.
pub fn execute(cfg: &ExperimentConfig, seed: u64) -> Result<Outcome, RunError> {
    let a = cfg.action;
    match &cfg.model {
        ModelConfig::Jackson(m) => suites::jackson::run(cfg, m, a, seed),
        ModelConfig::Exclusion(m) => suites::exclusion::run(cfg, m, a, seed),
        ModelConfig::Lambda(_) | ModelConfig::Mu(_) | ModelConfig::Wedge(_) | ModelConfig::Switch(_) | ModelConfig::TwoComp(_) => {
            suites::hybrid::run(cfg, a, seed)
        }
        ModelConfig::OuB(_) | ModelConfig::OuC(_) | ModelConfig::OuD(_) => suites::ouenv::run(cfg, a, seed),
    }
}

/// Result of [`run`]: the outcome and the files written.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub outcome: Outcome,
    pub files: Vec<PathBuf>,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.outcome.all_pass() {
            0
        } else {
            1
        }
    }
}

/// Runs an experiment and writes its artifacts into `out`.
pub fn run(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<RunReport, RunError> {
    let outcome = execute(cfg, seed)?;
    let files = output::write_outcome(out, &outcome).map_err(|e| RunError::Runtime(anyhow::Error::new(e).context(format!("writing {}", out.display()))))?;
    Ok(RunReport { outcome, files })
}

/// Default output directory for a config.
pub fn default_out_dir(cfg: &ExperimentConfig) -> PathBuf {
    if let Some(p) = &cfg.output {
        return p.clone();
    }
    let name = cfg.name.clone().unwrap_or_else(|| cfg.model.kind().replace('.', "-"));
    PathBuf::from("renv-out").join(format!("{name}-{}", cfg.action.name()))
}

pub(crate) fn unsupported(action: Action, cfg: &ExperimentConfig) -> RunError {
    RunError::Config(ConfigError::Unsupported { action: action.name(), model: cfg.model.kind() })
}
