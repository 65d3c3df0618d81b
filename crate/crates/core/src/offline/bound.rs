//! Theoretical makespan lower bound.
//!
//! Prefill and decode stages never overlap, so the makespan is at least the
//! best possible total prefill time plus the best possible total decode time.
//!
//! Prefill: `T^p_L * floor(sum N^p / N^cap_L)` with `L` the largest level.
//!
//! Decode: every round costs `active * T^d + O^d` and emits one token per
//! active client, and a client decodes its requests one after another. Over
//! all rounds the per-token terms add up to `T^d * sum N^d` whatever the
//! schedule, and the number of rounds is at least the min-makespan packing of
//! the decode token counts onto the clients. Hence
//! `decode >= T^d * sum N^d + O^d * B*`.

use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::workload::Trace;

use super::assign::{assign_exact, assign_lpt, decode_tokens, ExactOptions, ServiceMode};
use super::OfflineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrefillRounding {
    #[default]
    Floor,
    /// Tighter but no longer a guaranteed bound.
    Ceil,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BoundOptions {
    pub rounding: PrefillRounding,
    pub exact: ExactOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub prefill_part: f64,
    pub decode_part: f64,
    pub total: f64,
    /// Optimal client packing in decode tokens (`B*`), or the LPT value.
    pub packing_tokens: u64,
    /// False when the packing came from LPT or an exhausted budget; the
    /// decode part is then a heuristic estimate rather than a proven bound.
    pub exact: bool,
}

pub fn lower_bound(
    trace: &Trace,
    clients: usize,
    cost: &CostModel,
    mode: ServiceMode,
    opts: BoundOptions,
) -> Result<LowerBound, OfflineError> {
    if trace.is_empty() {
        return Err(OfflineError::EmptyTrace);
    }
    let largest = cost.levels.largest();
    let input = trace.total_input_tokens();
    let chunks = match opts.rounding {
        PrefillRounding::Floor => input / largest.capacity,
        PrefillRounding::Ceil => input.div_ceil(largest.capacity),
    };
    let prefill_part = largest.duration_ms * chunks as f64;

    let (packing_tokens, exact) = if trace.len() <= opts.exact.instance_cap || opts.exact.node_budget.is_some() {
        let ex = assign_exact(trace, clients, cost, mode, opts.exact)?;
        (ex.assignment.token_makespan(), ex.proven_optimal)
    } else {
        (assign_lpt(trace, clients, cost, mode)?.token_makespan(), false)
    };
    let tokens: u64 = trace.requests.iter().map(|r| decode_tokens(r, mode)).sum();
    let decode_part = cost.decode_rate * tokens as f64 + cost.decode_overhead * packing_tokens as f64;
    Ok(LowerBound { prefill_part, decode_part, total: prefill_part + decode_part, packing_tokens, exact })
}
