//! The PD-competition serving loop.
//!
//! At every bin boundary (system start, or the end of a decode round) idle
//! clients pull their next request, then the policy picks one prefill stage
//! or one decode round. A prefill opens a new bin; decode rounds extend the
//! current bin's decode stage. Each round costs `active * T^d + O^d` and
//! every decoding client emits one token.

use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::offline::{decode_tokens, Assignment, ServiceMode};
use crate::online::{iteration_decision, DecisionKind, DecodeCostScope, IterationDecision, OnlineState, QueueOrder};
use crate::workload::Trace;

use super::metrics::{compute_metrics, Metrics};
use super::schedule::{Bin, DecodeShare, DecodeStage, Member, PrefillStage, Schedule};
use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// FCFS, prefill-first, static round-robin placement.
    #[default]
    Baseline,
    /// Prefill-first on an offline assignment.
    Offline,
    /// Sorted queues, stealing and cost-based prefill insertion on a
    /// round-robin start.
    Online,
    /// The online policy on top of an offline assignment.
    Hybrid,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Baseline, Policy::Offline, Policy::Online, Policy::Hybrid];

    pub fn needs_assignment(self) -> bool {
        matches!(self, Policy::Offline | Policy::Hybrid)
    }

    pub fn name(self) -> &'static str {
        match self {
            Policy::Baseline => "baseline",
            Policy::Offline => "offline",
            Policy::Online => "online",
            Policy::Hybrid => "hybrid",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown policy {s:?} (expected baseline|offline|online|hybrid)"))
    }
}

/// Ties between prefill and decode cost. Only one rule exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieRule {
    #[default]
    Decode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub policy: Policy,
    pub steal: bool,
    pub tie: TieRule,
    pub decode_cost_scope: DecodeCostScope,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig { policy: Policy::Baseline, steal: true, tie: TieRule::Decode, decode_cost_scope: DecodeCostScope::Active }
    }
}

impl PolicyConfig {
    pub fn of(policy: Policy) -> Self {
        PolicyConfig { policy, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    Dispatch { request: u32, client: usize, stolen_from: Option<usize> },
    Decision { decision: IterationDecision },
    Prefill { bin: usize, level: usize, tokens: u64, requests: usize },
    DecodeRound { bin: usize, active: usize },
    Complete { request: u32, client: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub time_us: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub schedule: Schedule,
    pub metrics: Metrics,
    pub events: Vec<Event>,
}

fn round_robin(trace: &Trace, clients: usize) -> Vec<Vec<u32>> {
    let mut queues = vec![Vec::new(); clients];
    for r in &trace.requests {
        queues[r.id as usize % clients].push(r.id);
    }
    queues
}

fn initial_state(
    trace: &Trace,
    clients: usize,
    cfg: &PolicyConfig,
    assignment: Option<&Assignment>,
) -> Result<OnlineState, SimError> {
    let assignment = if cfg.policy.needs_assignment() {
        let a = assignment.ok_or(SimError::MissingAssignment(cfg.policy))?;
        if a.client_of.len() != trace.len() {
            return Err(SimError::AssignmentMismatch(format!(
                "assignment covers {} requests, trace has {}",
                a.client_of.len(),
                trace.len()
            )));
        }
        if a.clients() != clients || a.client_of.iter().any(|&j| j >= clients) {
            return Err(SimError::AssignmentMismatch(format!("assignment is not over {clients} clients")));
        }
        Some(a)
    } else {
        None
    };
    let inputs = trace.requests.iter().map(|r| r.input_tokens).collect();
    let expected = |mode| trace.requests.iter().map(|r| decode_tokens(r, mode) as u32).collect();
    let (queues, order, steal, mode) = match cfg.policy {
        Policy::Baseline => (round_robin(trace, clients), QueueOrder::AsGiven, false, ServiceMode::Estimate),
        Policy::Offline => {
            let a = assignment.unwrap();
            (a.queues(trace), QueueOrder::AsGiven, false, a.mode)
        }
        Policy::Online => (round_robin(trace, clients), QueueOrder::LongestFirst, cfg.steal, ServiceMode::Estimate),
        Policy::Hybrid => {
            let a = assignment.unwrap();
            (a.queues(trace), QueueOrder::LongestFirst, cfg.steal, a.mode)
        }
    };
    Ok(OnlineState::new(queues, inputs, expected(mode), order, steal)?)
}

/// Simulates one trace under one policy. `assignment` is required for
/// [`Policy::Offline`] and [`Policy::Hybrid`] and ignored otherwise.
pub fn run(
    trace: &Trace,
    clients: usize,
    cost: &CostModel,
    cfg: &PolicyConfig,
    assignment: Option<&Assignment>,
) -> Result<RunOutput, SimError> {
    if clients == 0 {
        return Err(SimError::NoClients);
    }
    trace.validate()?;
    let capacity = cost.max_prefill_tokens();
    if let Some(r) = trace.requests.iter().find(|r| r.input_tokens as u64 > capacity) {
        return Err(SimError::InputOverCapacity { request: r.id, tokens: r.input_tokens, capacity });
    }
    let mut state = initial_state(trace, clients, cfg, assignment)?;
    let mut bins: Vec<Bin> = Vec::new();
    let mut events = Vec::new();
    let mut now = 0u64;
    // Index into the current bin's shares, per client.
    let mut share_slot: Vec<Option<usize>> = vec![None; clients];

    loop {
        for j in 0..clients {
            if state.is_idle(j) {
                if let Some(d) = state.dispatch(j)? {
                    events.push(Event {
                        time_us: now,
                        kind: EventKind::Dispatch { request: d.request, client: j, stolen_from: d.stolen_from },
                    });
                }
            }
        }
        let has_waiting = !state.waiting_prefill().is_empty();
        let active = state.active_count();
        if !has_waiting && active == 0 {
            break;
        }
        let kind = match cfg.policy {
            Policy::Baseline | Policy::Offline => {
                if has_waiting {
                    DecisionKind::Prefill
                } else {
                    DecisionKind::Decode
                }
            }
            Policy::Online | Policy::Hybrid => {
                let decision = iteration_decision(&state, cost, cfg.decode_cost_scope)?;
                events.push(Event { time_us: now, kind: EventKind::Decision { decision } });
                decision.kind
            }
        };
        match kind {
            DecisionKind::Prefill => {
                let batch = state.prefill_batch(capacity);
                let tokens: u64 = batch.iter().map(|&id| trace.requests[id as usize].input_tokens as u64).sum();
                let (length_us, level) = cost.prefill_stage_us(tokens)?;
                let members = batch
                    .iter()
                    .map(|&id| Member { request: id, client: state.client_of(id).expect("waiting request has a client") })
                    .collect();
                state.start_prefill(&batch)?;
                let index = bins.len() + 1;
                bins.push(Bin {
                    index,
                    prefill: PrefillStage { start_us: now, length_us, level: level.index, members },
                    decode: DecodeStage { start_us: now + length_us, ..Default::default() },
                });
                events.push(Event {
                    time_us: now,
                    kind: EventKind::Prefill { bin: index, level: level.index, tokens, requests: batch.len() },
                });
                share_slot.iter_mut().for_each(|s| *s = None);
                now += length_us;
            }
            DecisionKind::Decode => {
                let bin = bins.last_mut().expect("first decision is always a prefill");
                let round_us = cost.decode_round_us(active)?;
                let decoding: Vec<(usize, u32, u32)> = state.active_decode().collect();
                for &(j, request, _) in &decoding {
                    let slot = *share_slot[j].get_or_insert_with(|| {
                        bin.decode.shares.push(DecodeShare { client: j, request, tokens: 0 });
                        bin.decode.shares.len() - 1
                    });
                    bin.decode.shares[slot].tokens += 1;
                }
                bin.decode.round_lengths_us.push(round_us);
                bin.decode.length_us += round_us;
                events.push(Event { time_us: now, kind: EventKind::DecodeRound { bin: bin.index, active } });
                state.record_round();
                now += round_us;
                for (j, request, decoded) in decoding {
                    if decoded + 1 == trace.requests[request as usize].output_tokens {
                        state.complete(j)?;
                        events.push(Event { time_us: now, kind: EventKind::Complete { request, client: j } });
                    }
                }
            }
        }
    }
    if !state.is_drained() {
        return Err(SimError::Stalled { remaining: state.queued_total() });
    }
    let schedule = Schedule { clients, bins, makespan_us: now };
    let metrics = compute_metrics(&schedule, trace)?;
    Ok(RunOutput { schedule, metrics, events })
}
