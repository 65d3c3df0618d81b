//! Min-makespan request-to-client assignment.
//!
//! The solvers work on integer token weights so that results are exact and
//! deterministic; millisecond loads are derived from them afterwards.

use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::workload::{Request, Trace};

use super::OfflineError;

/// Largest instance the exact solver accepts without an explicit budget.
pub const DEFAULT_EXACT_CAP: usize = 24;
pub const DEFAULT_NODE_BUDGET: u64 = 10_000_000;

/// Which output length a solver may look at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceMode {
    /// True output length (requests known in advance, e.g. RLHF rollouts).
    #[default]
    Oracle,
    /// The shared output estimate only.
    Estimate,
}

pub fn decode_tokens(request: &Request, mode: ServiceMode) -> u64 {
    match mode {
        ServiceMode::Oracle => request.output_tokens as u64,
        ServiceMode::Estimate => request.est_output_tokens as u64,
    }
}

/// Decode-only service time `T_i` in ms.
pub fn service_time(request: &Request, cost: &CostModel, mode: ServiceMode) -> f64 {
    decode_tokens(request, mode) as f64 * cost.decode_rate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `client_of[id]` is the client request `id` runs on.
    pub client_of: Vec<usize>,
    /// Per-client total service time in ms.
    pub loads: Vec<f64>,
    pub makespan_est: f64,
    /// Per-client total decode tokens, the integer objective the solvers use.
    pub token_loads: Vec<u64>,
    pub mode: ServiceMode,
}

impl Assignment {
    fn build(trace: &Trace, clients: usize, client_of: Vec<usize>, cost: &CostModel, mode: ServiceMode) -> Self {
        let mut loads = vec![0.0; clients];
        let mut token_loads = vec![0u64; clients];
        for (r, &j) in trace.requests.iter().zip(&client_of) {
            loads[j] += service_time(r, cost, mode);
            token_loads[j] += decode_tokens(r, mode);
        }
        let makespan_est = loads.iter().copied().fold(0.0, f64::max);
        Assignment { client_of, loads, makespan_est, token_loads, mode }
    }

    pub fn clients(&self) -> usize {
        self.loads.len()
    }

    pub fn token_makespan(&self) -> u64 {
        self.token_loads.iter().copied().max().unwrap_or(0)
    }

    /// Per-client request queues, longest (by the assignment's own weights)
    /// first, ties by id.
    pub fn queues(&self, trace: &Trace) -> Vec<Vec<u32>> {
        let mut queues = vec![Vec::new(); self.clients()];
        for r in &trace.requests {
            queues[self.client_of[r.id as usize]].push(r.id);
        }
        for q in &mut queues {
            q.sort_by_key(|&id| (std::cmp::Reverse(decode_tokens(&trace.requests[id as usize], self.mode)), id));
        }
        queues
    }
}

fn sorted_items(weights: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(weights[i]), i));
    order
}

/// Longest-processing-time-first: heaviest item to the least loaded client,
/// ties broken by lower client index then lower item index.
pub fn lpt_schedule(weights: &[u64], clients: usize) -> Vec<usize> {
    let mut loads = vec![0u64; clients];
    let mut client_of = vec![0usize; weights.len()];
    for item in sorted_items(weights) {
        let (j, _) = loads.iter().enumerate().min_by_key(|&(j, &l)| (l, j)).expect("clients >= 1");
        loads[j] += weights[item];
        client_of[item] = j;
    }
    client_of
}

pub fn makespan_of(weights: &[u64], client_of: &[usize], clients: usize) -> u64 {
    let mut loads = vec![0u64; clients];
    for (w, &j) in weights.iter().zip(client_of) {
        loads[j] += w;
    }
    loads.into_iter().max().unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnbResult {
    pub client_of: Vec<usize>,
    pub makespan: u64,
    pub proven_optimal: bool,
    pub nodes: u64,
    /// `max(max w, ceil(sum w / J))`, valid for every assignment.
    pub root_bound: u64,
}

struct Search<'a> {
    weights: &'a [u64],
    order: Vec<usize>,
    suffix: Vec<u64>,
    loads: Vec<u64>,
    current: Vec<usize>,
    best: Vec<usize>,
    best_makespan: u64,
    root_bound: u64,
    nodes: u64,
    budget: u64,
    exhausted: bool,
}

impl Search<'_> {
    fn dfs(&mut self, depth: usize) {
        if self.best_makespan == self.root_bound || self.exhausted {
            return;
        }
        if depth == self.order.len() {
            let ms = self.loads.iter().copied().max().unwrap_or(0);
            if ms < self.best_makespan {
                self.best_makespan = ms;
                self.best = self.current.clone();
            }
            return;
        }
        self.nodes += 1;
        if self.nodes > self.budget {
            self.exhausted = true;
            return;
        }
        let item = self.order[depth];
        let w = self.weights[item];
        let j_count = self.loads.len() as u64;
        let assigned: u64 = self.loads.iter().sum();
        let fill_bound = (assigned + self.suffix[depth]).div_ceil(j_count);
        let max_load = self.loads.iter().copied().max().unwrap_or(0);
        if fill_bound.max(max_load) >= self.best_makespan {
            return;
        }
        let mut candidates: Vec<usize> = (0..self.loads.len()).collect();
        candidates.sort_by_key(|&j| (self.loads[j], j));
        let mut last_load = None;
        for j in candidates {
            let load = self.loads[j];
            // Clients with equal load are interchangeable.
            if last_load == Some(load) {
                continue;
            }
            last_load = Some(load);
            if load + w >= self.best_makespan {
                // Candidates are load-sorted, so the rest are no better.
                break;
            }
            self.loads[j] += w;
            self.current[item] = j;
            self.dfs(depth + 1);
            self.loads[j] -= w;
            if self.exhausted || self.best_makespan == self.root_bound {
                return;
            }
        }
    }
}

/// Depth-first branch-and-bound seeded with the LPT incumbent. Items are
/// branched in LPT order, so results are deterministic for a fixed input.
pub fn branch_and_bound(weights: &[u64], clients: usize, node_budget: u64) -> BnbResult {
    let lpt = lpt_schedule(weights, clients);
    let lpt_makespan = makespan_of(weights, &lpt, clients);
    let total: u64 = weights.iter().sum();
    let max_w = weights.iter().copied().max().unwrap_or(0);
    let root_bound = max_w.max(total.div_ceil(clients as u64));
    let order = sorted_items(weights);
    let mut suffix = vec![0u64; order.len() + 1];
    for d in (0..order.len()).rev() {
        suffix[d] = suffix[d + 1] + weights[order[d]];
    }
    let mut search = Search {
        weights,
        order,
        suffix,
        loads: vec![0; clients],
        current: vec![0; weights.len()],
        best: lpt,
        best_makespan: lpt_makespan,
        root_bound,
        nodes: 0,
        budget: node_budget,
        exhausted: false,
    };
    search.dfs(0);
    BnbResult {
        proven_optimal: !search.exhausted,
        makespan: search.best_makespan,
        client_of: search.best,
        nodes: search.nodes,
        root_bound,
    }
}

fn token_weights(trace: &Trace, mode: ServiceMode) -> Vec<u64> {
    trace.requests.iter().map(|r| decode_tokens(r, mode)).collect()
}

fn check(trace: &Trace, clients: usize) -> Result<(), OfflineError> {
    if clients == 0 {
        return Err(OfflineError::NoClients);
    }
    if trace.is_empty() {
        return Err(OfflineError::EmptyTrace);
    }
    Ok(())
}

pub fn assign_lpt(trace: &Trace, clients: usize, cost: &CostModel, mode: ServiceMode) -> Result<Assignment, OfflineError> {
    check(trace, clients)?;
    let client_of = lpt_schedule(&token_weights(trace, mode), clients);
    Ok(Assignment::build(trace, clients, client_of, cost, mode))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactOptions {
    pub instance_cap: usize,
    /// Explicit node budget; allows instances above `instance_cap`.
    pub node_budget: Option<u64>,
}

impl Default for ExactOptions {
    fn default() -> Self {
        ExactOptions { instance_cap: DEFAULT_EXACT_CAP, node_budget: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactAssignment {
    pub assignment: Assignment,
    pub proven_optimal: bool,
    pub nodes: u64,
}

pub fn assign_exact(
    trace: &Trace,
    clients: usize,
    cost: &CostModel,
    mode: ServiceMode,
    opts: ExactOptions,
) -> Result<ExactAssignment, OfflineError> {
    check(trace, clients)?;
    if opts.node_budget.is_none() && trace.len() > opts.instance_cap {
        return Err(OfflineError::TooLarge { requests: trace.len(), cap: opts.instance_cap });
    }
    let res = branch_and_bound(&token_weights(trace, mode), clients, opts.node_budget.unwrap_or(DEFAULT_NODE_BUDGET));
    Ok(ExactAssignment {
        assignment: Assignment::build(trace, clients, res.client_of, cost, mode),
        proven_optimal: res.proven_optimal,
        nodes: res.nodes,
    })
}

/// Exact when the instance is within the cap, LPT otherwise. The flag says
/// which one ran.
pub fn assign_auto(
    trace: &Trace,
    clients: usize,
    cost: &CostModel,
    mode: ServiceMode,
    opts: ExactOptions,
) -> Result<(Assignment, bool), OfflineError> {
    if trace.len() <= opts.instance_cap || opts.node_budget.is_some() {
        let ex = assign_exact(trace, clients, cost, mode, opts)?;
        Ok((ex.assignment, ex.proven_optimal))
    } else {
        Ok((assign_lpt(trace, clients, cost, mode)?, false))
    }
}
