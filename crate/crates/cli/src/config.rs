//! Pipeline run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cascade_core::error::{Error, Result};
use cascade_core::planner::PlanParams;
use cascade_core::sim::SimConfig;
use cascade_core::skip::OperatingMode;
use cascade_core::threshold::SearchParams;
use cascade_core::trace::SCHEMA_VERSION;

/// Poisson workload settings for the simulation stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub rate: f64,
    pub duration: f64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            rate: 40.0,
            duration: 30.0,
        }
    }
}

/// Everything the `pipeline` subcommand needs, in one reproducible file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub mode: OperatingMode,
    /// Joint-accuracy spec to synthesize a trace from.
    #[serde(default)]
    pub family_spec: Option<PathBuf>,
    /// Pre-existing trace; used when `family_spec` is absent.
    #[serde(default)]
    pub trace: Option<PathBuf>,
    /// Records to synthesize when generating.
    #[serde(default = "default_trace_n")]
    pub trace_n: usize,
    pub profiles: PathBuf,
    pub cluster: PathBuf,
    #[serde(default)]
    pub search: SearchParams,
    #[serde(default)]
    pub planner: PlanParams,
    #[serde(default)]
    pub workload: WorkloadConfig,
    #[serde(default)]
    pub sim: SimConfig,
}

fn default_trace_n() -> usize {
    4000
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported config schema_version {}",
                config.schema_version
            )));
        }
        if config.family_spec.is_none() && config.trace.is_none() {
            return Err(Error::Invariant(
                "config needs either family_spec or trace".into(),
            ));
        }
        Ok(config)
    }
}
