//! Makespan, utilization and generation speed of a finished schedule.
//!
//! A client counts as busy from the start of the prefill stage that holds
//! its request until the end of the decode round emitting that request's
//! last token. It is idle while it has no request or its next request is
//! still waiting to be prefilled.

use serde::{Deserialize, Serialize};

use crate::cost::us_to_ms;
use crate::workload::Trace;

use super::schedule::Schedule;
use super::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub makespan_s: f64,
    pub utilization: f64,
    /// Output tokens per second.
    pub generation_speed: f64,
    pub per_client_busy_ms: Vec<f64>,
    pub bubbles_ms: f64,
}

/// Busy span `[prefill start, last token]` of every request, in µs, indexed
/// by request id. `None` for requests that never finished.
pub fn request_spans(schedule: &Schedule, trace: &Trace) -> Vec<Option<(usize, u64, u64)>> {
    let n = trace.len();
    let mut start = vec![None; n];
    let mut decoded = vec![0u32; n];
    let mut spans = vec![None; n];
    for bin in &schedule.bins {
        for m in &bin.prefill.members {
            if let Some(s) = start.get_mut(m.request as usize) {
                *s = Some((m.client, bin.prefill.start_us));
            }
        }
        for share in &bin.decode.shares {
            let id = share.request as usize;
            let Some(req) = trace.requests.get(id) else { continue };
            decoded[id] += share.tokens;
            if decoded[id] == req.output_tokens {
                if let Some((client, s)) = start[id] {
                    spans[id] = Some((client, s, bin.decode.offset_end_us(share.tokens)));
                }
            }
        }
    }
    spans
}

pub fn compute_metrics(schedule: &Schedule, trace: &Trace) -> Result<Metrics, SimError> {
    let clients = schedule.clients;
    let mut busy_us = vec![0u64; clients];
    for (id, span) in request_spans(schedule, trace).into_iter().enumerate() {
        let (client, s, e) = span.ok_or_else(|| SimError::ScheduleMismatch(format!("request {id} never completes")))?;
        if client >= clients {
            return Err(SimError::ScheduleMismatch(format!("request {id} on unknown client {client}")));
        }
        busy_us[client] += e - s;
    }
    let capacity_us = clients as u64 * schedule.makespan_us;
    let busy_total: u64 = busy_us.iter().sum();
    let makespan_s = schedule.makespan_us as f64 / 1e6;
    let utilization = if capacity_us == 0 { 0.0 } else { busy_total as f64 / capacity_us as f64 };
    let generation_speed = if makespan_s > 0.0 { trace.total_output_tokens() as f64 / makespan_s } else { 0.0 };
    Ok(Metrics {
        makespan_s,
        utilization,
        generation_speed,
        per_client_busy_ms: busy_us.into_iter().map(us_to_ms).collect(),
        bubbles_ms: us_to_ms(capacity_us.saturating_sub(busy_total)),
    })
}
