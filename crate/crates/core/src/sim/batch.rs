//! Many seeded cases, baseline against hybrid.

use serde::{Deserialize, Serialize};

use crate::cost::{CostConfig, CostModel};
use crate::offline::{assign_auto, ExactOptions, ServiceMode};
use crate::workload::{generate_trace, SamplerParams};

use super::engine::{run, Policy, PolicyConfig};
use super::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchConfig {
    pub requests: usize,
    pub clients: usize,
    pub params: SamplerParams,
    pub cost: CostConfig,
    pub policy: PolicyConfig,
    pub mode: ServiceMode,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            requests: 1319,
            clients: 200,
            params: SamplerParams::GSM8K,
            cost: CostConfig::default(),
            policy: PolicyConfig::of(Policy::Hybrid),
            mode: ServiceMode::Oracle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub case: usize,
    pub seed: u64,
    pub baseline_makespan_s: f64,
    pub baseline_utilization: f64,
    pub baseline_speed: f64,
    pub hybrid_makespan_s: f64,
    pub hybrid_utilization: f64,
    pub hybrid_speed: f64,
}

impl BatchRow {
    pub fn hybrid_wins(&self) -> bool {
        self.hybrid_utilization > self.baseline_utilization
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub cases: usize,
    pub baseline_utilization_mean: f64,
    pub hybrid_utilization_mean: f64,
    pub utilization_delta_mean: f64,
    pub speed_delta_mean: f64,
    pub makespan_delta_mean_s: f64,
    pub hybrid_wins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub rows: Vec<BatchRow>,
    pub summary: BatchSummary,
}

impl BatchReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
    }
}

fn one_case(case: usize, seed: u64, cfg: &BatchConfig, cost: &CostModel) -> Result<BatchRow, SimError> {
    let trace = generate_trace(cfg.requests, seed, cfg.params)?;
    let base = run(&trace, cfg.clients, cost, &PolicyConfig::of(Policy::Baseline), None)?;
    let (assignment, _) = assign_auto(&trace, cfg.clients, cost, cfg.mode, ExactOptions::default())?;
    let hybrid_cfg = PolicyConfig { policy: Policy::Hybrid, ..cfg.policy };
    let hyb = run(&trace, cfg.clients, cost, &hybrid_cfg, Some(&assignment))?;
    Ok(BatchRow {
        case,
        seed,
        baseline_makespan_s: base.metrics.makespan_s,
        baseline_utilization: base.metrics.utilization,
        baseline_speed: base.metrics.generation_speed,
        hybrid_makespan_s: hyb.metrics.makespan_s,
        hybrid_utilization: hyb.metrics.utilization,
        hybrid_speed: hyb.metrics.generation_speed,
    })
}

/// Runs cases on seeds `seed, seed + 1, ...`. Rows come back in case order
/// whether or not the `parallel` feature is on.
pub fn run_batch(cases: usize, seed: u64, cfg: &BatchConfig) -> Result<BatchReport, SimError> {
    if cases == 0 {
        return Err(SimError::NoCases);
    }
    let cost = CostModel::from_config(&cfg.cost)?;
    let job = |i: usize| one_case(i, seed.wrapping_add(i as u64), cfg, &cost);
    #[cfg(feature = "parallel")]
    let rows: Result<Vec<_>, _> = {
        use rayon::prelude::*;
        (0..cases).into_par_iter().map(job).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Result<Vec<_>, _> = (0..cases).map(job).collect();
    let rows = rows?;

    let n = rows.len().max(1) as f64;
    let mean = |f: fn(&BatchRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let summary = BatchSummary {
        cases: rows.len(),
        baseline_utilization_mean: mean(|r| r.baseline_utilization),
        hybrid_utilization_mean: mean(|r| r.hybrid_utilization),
        utilization_delta_mean: mean(|r| r.hybrid_utilization - r.baseline_utilization),
        speed_delta_mean: mean(|r| r.hybrid_speed - r.baseline_speed),
        makespan_delta_mean_s: mean(|r| r.hybrid_makespan_s - r.baseline_makespan_s),
        hybrid_wins: rows.iter().filter(|r| r.hybrid_wins()).count(),
    };
    Ok(BatchReport { rows, summary })
}
