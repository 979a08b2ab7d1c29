//! Run configuration: an optional JSON file with command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use psbayes::sim::DgpSpec;
use psbayes::strategies::Strategy;
use psbayes::StrategyConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a study needs. Every field may be omitted from the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dgp: DgpSpec,
    /// `"all"` or a comma-separated list such as `"A1,C"`.
    pub strategies: String,
    pub r: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Worker threads; absent means one per core.
    pub jobs: Option<usize>,
    pub analysis: StrategyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dgp: DgpSpec::default(),
            strategies: "all".into(),
            r: 200,
            seed: 1,
            out: None,
            jobs: None,
            analysis: StrategyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn strategy_list(&self) -> Result<Vec<Strategy>, CliError> {
        Strategy::parse_list(&self.strategies).map_err(|e| CliError::Usage(e.to_string()))
    }

    /// Checks every numeric setting against what the library accepts.
    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: psbayes::Error| CliError::Usage(e.to_string());
        self.dgp.validate().map_err(usage)?;
        self.analysis.chain.validate().map_err(usage)?;
        self.analysis.inner.validate().map_err(usage)?;
        self.strategy_list()?;
        if self.analysis.boot == 0 {
            return Err(CliError::Usage("boot must be at least 1".into()));
        }
        if self.r == 0 {
            return Err(CliError::Usage("r must be at least 1".into()));
        }
        if self.jobs == Some(0) {
            return Err(CliError::Usage("jobs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn parallelism(&self) -> psbayes::Parallelism {
        match self.jobs {
            Some(1) => psbayes::Parallelism::Sequential,
            _ => psbayes::Parallelism::Parallel,
        }
    }
}
