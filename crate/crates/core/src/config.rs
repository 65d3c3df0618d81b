//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostConfig, CostError, CostModel};
use crate::offline::{assign_auto, assign_exact, assign_lpt, Assignment, ExactOptions, OfflineError, ServiceMode};
use crate::sim::PolicyConfig;
use crate::workload::{generate_trace, load_trace, SamplerParams, Trace, WorkloadError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown preset {0:?} (expected gsm8k)")]
    UnknownPreset(String),
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Offline(#[from] OfflineError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum TraceSource {
    /// A trace file, relative to the config file's directory.
    Path(PathBuf),
    Generate { count: usize, params: SamplerParams },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    /// Exact within the instance cap, LPT above it.
    #[default]
    Auto,
    Lpt,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssignmentConfig {
    pub solver: Solver,
    pub mode: ServiceMode,
    pub instance_cap: usize,
    pub node_budget: Option<u64>,
}

impl Default for AssignmentConfig {
    fn default() -> Self {
        let ex = ExactOptions::default();
        AssignmentConfig { solver: Solver::Auto, mode: ServiceMode::Oracle, instance_cap: ex.instance_cap, node_budget: ex.node_budget }
    }
}

impl AssignmentConfig {
    pub fn exact_options(&self) -> ExactOptions {
        ExactOptions { instance_cap: self.instance_cap, node_budget: self.node_budget }
    }

    pub fn solve(&self, trace: &Trace, clients: usize, cost: &CostModel) -> Result<Assignment, OfflineError> {
        match self.solver {
            Solver::Auto => Ok(assign_auto(trace, clients, cost, self.mode, self.exact_options())?.0),
            Solver::Lpt => assign_lpt(trace, clients, cost, self.mode),
            Solver::Exact => Ok(assign_exact(trace, clients, cost, self.mode, self.exact_options())?.assignment),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Outputs {
    pub gantt_svg: Option<PathBuf>,
    pub gantt_csv: Option<PathBuf>,
    pub metrics_json: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub trace: TraceSource,
    pub clients: usize,
    pub seed: u64,
    pub cost: CostConfig,
    pub policy: PolicyConfig,
    pub assignment: AssignmentConfig,
    pub outputs: Outputs,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::gsm8k()
    }
}

impl RunConfig {
    /// 1319 GSM8K-style requests on 200 clients.
    pub fn gsm8k() -> Self {
        RunConfig {
            trace: TraceSource::Generate { count: 1319, params: SamplerParams::GSM8K },
            clients: 200,
            seed: 0,
            cost: CostConfig::default(),
            policy: PolicyConfig::default(),
            assignment: AssignmentConfig::default(),
            outputs: Outputs::default(),
        }
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name {
            "gsm8k" => Ok(Self::gsm8k()),
            _ => Err(ConfigError::UnknownPreset(name.to_string())),
        }
    }

    pub fn from_json(source: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(source)?)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_json(&text)?;
        if let TraceSource::Path(p) = &mut cfg.trace {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn cost_model(&self) -> Result<CostModel, ConfigError> {
        Ok(CostModel::from_config(&self.cost)?)
    }

    pub fn load_trace(&self) -> Result<Trace, ConfigError> {
        match &self.trace {
            TraceSource::Path(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.clone(), source })?;
                Ok(load_trace(&text)?)
            }
            TraceSource::Generate { count, params } => Ok(generate_trace(*count, self.seed, *params)?),
        }
    }
}
