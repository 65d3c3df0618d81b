//! Browser bindings. Each export takes and returns JSON text; the plain
//! `*_json` functions hold the logic so they can be tested natively.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use pdsched::cost::{CostConfig, CostModel};
use pdsched::offline::{assign_auto, lower_bound, BoundOptions, ExactOptions, ServiceMode};
use pdsched::online::DecodeCostScope;
use pdsched::sim::{export_gantt, run, GanttFormat, Metrics, Policy, PolicyConfig};
use pdsched::workload::{generate_trace, SamplerParams, Trace};

const MAX_REQUESTS: usize = 20_000;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub count: usize,
    pub seed: u64,
    pub clients: usize,
    pub params: SamplerParams,
    pub cost: CostConfig,
    pub policy: Policy,
    pub steal: bool,
    pub decode_cost_scope: DecodeCostScope,
    pub mode: ServiceMode,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            count: 1319,
            seed: 0,
            clients: 200,
            params: SamplerParams::GSM8K,
            cost: CostConfig::default(),
            policy: Policy::Hybrid,
            steal: true,
            decode_cost_scope: DecodeCostScope::Active,
            mode: ServiceMode::Oracle,
        }
    }
}

struct Prepared {
    trace: Trace,
    cost: CostModel,
    scenario: Scenario,
}

fn prepare(input: &str) -> Result<Prepared, String> {
    let scenario: Scenario = serde_json::from_str(input).map_err(|e| format!("bad scenario: {e}"))?;
    if scenario.count > MAX_REQUESTS {
        return Err(format!("at most {MAX_REQUESTS} requests in the browser"));
    }
    let trace = generate_trace(scenario.count, scenario.seed, scenario.params).map_err(|e| e.to_string())?;
    let cost = CostModel::from_config(&scenario.cost).map_err(|e| e.to_string())?;
    Ok(Prepared { trace, cost, scenario })
}

fn simulate_policy(p: &Prepared, policy: Policy) -> Result<pdsched::RunOutput, String> {
    let s = &p.scenario;
    let cfg = PolicyConfig { policy, steal: s.steal, decode_cost_scope: s.decode_cost_scope, ..Default::default() };
    let assignment = if policy.needs_assignment() {
        Some(assign_auto(&p.trace, s.clients, &p.cost, s.mode, ExactOptions::default()).map_err(|e| e.to_string())?.0)
    } else {
        None
    };
    run(&p.trace, s.clients, &p.cost, &cfg, assignment.as_ref()).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Simulation {
    policy: Policy,
    metrics: Metrics,
    bins: usize,
    svg: String,
}

pub fn simulate_json(input: &str) -> Result<String, String> {
    let p = prepare(input)?;
    let out = simulate_policy(&p, p.scenario.policy)?;
    let sim = Simulation {
        policy: p.scenario.policy,
        bins: out.schedule.bins.len(),
        svg: export_gantt(&out.schedule, GanttFormat::Svg),
        metrics: out.metrics,
    };
    serde_json::to_string(&sim).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Bound {
    prefill_s: f64,
    decode_s: f64,
    total_s: f64,
    exact: bool,
}

pub fn lower_bound_json(input: &str) -> Result<String, String> {
    let p = prepare(input)?;
    let b = lower_bound(&p.trace, p.scenario.clients, &p.cost, p.scenario.mode, BoundOptions::default())
        .map_err(|e| e.to_string())?;
    let out = Bound { prefill_s: b.prefill_part / 1000.0, decode_s: b.decode_part / 1000.0, total_s: b.total / 1000.0, exact: b.exact };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Row {
    policy: Policy,
    makespan_s: f64,
    utilization: f64,
    generation_speed: f64,
}

pub fn compare_policies_json(input: &str) -> Result<String, String> {
    let p = prepare(input)?;
    let mut rows = Vec::new();
    for policy in Policy::ALL {
        let m = simulate_policy(&p, policy)?.metrics;
        rows.push(Row { policy, makespan_s: m.makespan_s, utilization: m.utilization, generation_speed: m.generation_speed });
    }
    serde_json::to_string(&rows).map_err(|e| e.to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

/// Runs one policy; returns metrics and an SVG Gantt chart.
#[wasm_bindgen]
pub fn simulate(scenario: &str) -> Result<String, JsError> {
    js(simulate_json(scenario))
}

#[wasm_bindgen(js_name = lowerBound)]
pub fn lower_bound_js(scenario: &str) -> Result<String, JsError> {
    js(lower_bound_json(scenario))
}

/// Runs all four policies on the same trace.
#[wasm_bindgen(js_name = comparePolicies)]
pub fn compare_policies(scenario: &str) -> Result<String, JsError> {
    js(compare_policies_json(scenario))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    const SMALL: &str = r#"{"count": 120, "clients": 12, "seed": 4}"#;

    #[test]
    fn simulate_returns_metrics_and_svg() {
        let v: Value = serde_json::from_str(&simulate_json(SMALL).unwrap()).unwrap();
        assert_eq!(v["policy"], "hybrid");
        assert!(v["metrics"]["utilization"].as_f64().unwrap() <= 1.0);
        assert!(v["svg"].as_str().unwrap().starts_with("<svg"));
    }

    #[test]
    fn bound_sits_below_every_policy() {
        let b: Value = serde_json::from_str(&lower_bound_json(SMALL).unwrap()).unwrap();
        let rows: Vec<Value> = serde_json::from_str(&compare_policies_json(SMALL).unwrap()).unwrap();
        assert_eq!(rows.len(), 4);
        for r in rows {
            assert!(r["makespan_s"].as_f64().unwrap() >= b["total_s"].as_f64().unwrap());
        }
    }

    #[test]
    fn bad_input_is_an_error() {
        assert!(simulate_json("{\"count\": 0}").is_err());
        assert!(simulate_json("{\"colour\": 1}").unwrap_err().contains("bad scenario"));
        assert!(simulate_json("{\"count\": 1000000}").is_err());
    }
}
