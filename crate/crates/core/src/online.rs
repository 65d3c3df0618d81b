//! Online request dispatch (sorted per-client queues with work stealing) and
//! the per-boundary prefill-versus-decode decision.
//!
//! [`OnlineState`] is the single mutable scheduler state. Every request is in
//! exactly one place at a time: a client queue, popped (dispatched but not
//! yet admitted), the waiting-prefill list, a client's decode slot, or done.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::CostModel;

#[derive(Debug, Error, PartialEq)]
pub enum OnlineError {
    #[error("client {0} is busy")]
    ClientBusy(usize),
    #[error("unknown client {0}")]
    UnknownClient(usize),
    #[error("unknown request {0}")]
    UnknownRequest(u32),
    #[error("request {0} already admitted")]
    DuplicateAdmission(u32),
    #[error("request {0} already completed")]
    AlreadyCompleted(u32),
    #[error("request {0} is not waiting for prefill")]
    NotWaiting(u32),
    #[error("client {0} has nothing decoding")]
    NotDecoding(usize),
    #[error("no waiting prefill and no active decode")]
    NothingToSchedule,
}

/// How a client's queue is ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueueOrder {
    /// Descending `N^p + expected N^d`, ties by id.
    LongestFirst,
    /// Keep the order handed in (FCFS or an offline solver's order).
    AsGiven,
}

/// Which stalled work the decode cost counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeCostScope {
    /// Expected remaining decode tokens of every request mid-decode.
    #[default]
    Active,
    /// Expected decode tokens of the requests the candidate prefill would admit.
    Waiting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DecisionKind {
    Prefill,
    Decode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationDecision {
    pub kind: DecisionKind,
    /// `C_p` in ms (0 when nothing waits).
    pub prefill_cost: f64,
    /// `C_d` in ms.
    pub decode_cost: f64,
    /// Set when one side was empty and the choice was not a comparison.
    pub forced: bool,
}

/// A request handed to a client by [`OnlineState::next_request`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Dispatch {
    pub request: u32,
    pub client: usize,
    /// Queue it was taken from, when that is not the client's own.
    pub stolen_from: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Queued(usize),
    Popped(usize),
    Waiting(usize),
    Decoding(usize),
    Completed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Idle,
    Reserved(u32),
    Waiting(u32),
    Decoding { request: u32, decoded: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineState {
    queues: Vec<VecDeque<u32>>,
    remain_token: Vec<u64>,
    waiting_prefill: Vec<u32>,
    slots: Vec<Slot>,
    status: Vec<Status>,
    input_tokens: Vec<u32>,
    expected_output: Vec<u32>,
    order: QueueOrder,
    steal: bool,
    /// Simulated clock in microseconds, maintained by the driver.
    pub now_us: u64,
}

impl OnlineState {
    /// `queues[j]` is client `j`'s initial request list; `input_tokens` and
    /// `expected_output` are indexed by request id.
    pub fn new(
        queues: Vec<Vec<u32>>,
        input_tokens: Vec<u32>,
        expected_output: Vec<u32>,
        order: QueueOrder,
        steal: bool,
    ) -> Result<Self, OnlineError> {
        let n = input_tokens.len();
        let mut status = vec![Status::Completed; n];
        let mut seen = vec![false; n];
        for (j, q) in queues.iter().enumerate() {
            for &id in q {
                let slot = seen.get_mut(id as usize).ok_or(OnlineError::UnknownRequest(id))?;
                if std::mem::replace(slot, true) {
                    return Err(OnlineError::DuplicateAdmission(id));
                }
                status[id as usize] = Status::Queued(j);
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(OnlineError::UnknownRequest(missing as u32));
        }
        let mut state = OnlineState {
            queues: queues.into_iter().map(VecDeque::from).collect(),
            remain_token: Vec::new(),
            waiting_prefill: Vec::new(),
            slots: Vec::new(),
            status,
            input_tokens,
            expected_output,
            order,
            steal,
            now_us: 0,
        };
        if order == QueueOrder::LongestFirst {
            for j in 0..state.queues.len() {
                let mut q: Vec<u32> = state.queues[j].drain(..).collect();
                q.sort_by_key(|&id| (std::cmp::Reverse(state.key(id)), id));
                state.queues[j] = q.into();
            }
        }
        state.slots = vec![Slot::Idle; state.queues.len()];
        state.remain_token = state.queues.iter().map(|q| q.iter().map(|&id| state.key(id)).sum()).collect();
        Ok(state)
    }

    /// Expected total tokens `N^p + N^d` of a request.
    pub fn key(&self, id: u32) -> u64 {
        self.input_tokens[id as usize] as u64 + self.expected_output[id as usize] as u64
    }

    pub fn clients(&self) -> usize {
        self.slots.len()
    }

    pub fn queue(&self, client: usize) -> impl Iterator<Item = u32> + '_ {
        self.queues[client].iter().copied()
    }

    pub fn remain_token(&self) -> &[u64] {
        &self.remain_token
    }

    pub fn waiting_prefill(&self) -> &[u32] {
        &self.waiting_prefill
    }

    pub fn is_idle(&self, client: usize) -> bool {
        matches!(self.slots.get(client), Some(Slot::Idle))
    }

    pub fn is_completed(&self, id: u32) -> bool {
        self.status.get(id as usize) == Some(&Status::Completed)
    }

    /// `(client, request, tokens decoded so far)` for every decoding client.
    pub fn active_decode(&self) -> impl Iterator<Item = (usize, u32, u32)> + '_ {
        self.slots.iter().enumerate().filter_map(|(j, s)| match *s {
            Slot::Decoding { request, decoded } => Some((j, request, decoded)),
            _ => None,
        })
    }

    pub fn active_count(&self) -> usize {
        self.active_decode().count()
    }

    pub fn queued_total(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }

    pub fn is_drained(&self) -> bool {
        self.status.iter().all(|s| *s == Status::Completed)
    }

    fn check_client(&self, client: usize) -> Result<(), OnlineError> {
        match self.slots.get(client) {
            None => Err(OnlineError::UnknownClient(client)),
            Some(Slot::Idle) => Ok(()),
            Some(_) => Err(OnlineError::ClientBusy(client)),
        }
    }

    /// Picks the next request for an idle client: the head of its own queue,
    /// otherwise (when stealing) the head of the queue with the most expected
    /// tokens left, lowest index on ties.
    pub fn next_request(&mut self, client: usize) -> Result<Option<Dispatch>, OnlineError> {
        self.check_client(client)?;
        let source = if !self.queues[client].is_empty() {
            client
        } else if self.steal {
            let (k, &most) = self
                .remain_token
                .iter()
                .enumerate()
                .max_by_key(|&(k, &r)| (r, std::cmp::Reverse(k)))
                .expect("at least one client");
            if most == 0 {
                return Ok(None);
            }
            k
        } else {
            return Ok(None);
        };
        let Some(id) = self.queues[source].pop_front() else {
            return Ok(None);
        };
        self.remain_token[source] -= self.key(id);
        self.status[id as usize] = Status::Popped(client);
        self.slots[client] = Slot::Reserved(id);
        Ok(Some(Dispatch { request: id, client, stolen_from: (source != client).then_some(source) }))
    }

    /// Puts a request on a client and appends it to the waiting-prefill list.
    /// A still-queued request is pulled out of its queue first.
    pub fn admit(&mut self, request: u32, client: usize) -> Result<(), OnlineError> {
        let status = *self.status.get(request as usize).ok_or(OnlineError::UnknownRequest(request))?;
        match status {
            Status::Completed => return Err(OnlineError::AlreadyCompleted(request)),
            Status::Waiting(_) | Status::Decoding(_) => return Err(OnlineError::DuplicateAdmission(request)),
            Status::Popped(j) if j == client => {}
            Status::Popped(_) => return Err(OnlineError::DuplicateAdmission(request)),
            Status::Queued(k) => {
                self.check_client(client)?;
                let pos = self.queues[k].iter().position(|&id| id == request).expect("status says queued");
                self.queues[k].remove(pos);
                self.remain_token[k] -= self.key(request);
            }
        }
        self.status[request as usize] = Status::Waiting(client);
        self.slots[client] = Slot::Waiting(request);
        self.waiting_prefill.push(request);
        Ok(())
    }

    /// `next_request` followed by `admit`.
    pub fn dispatch(&mut self, client: usize) -> Result<Option<Dispatch>, OnlineError> {
        let d = self.next_request(client)?;
        if let Some(d) = d {
            self.admit(d.request, client)?;
        }
        Ok(d)
    }

    /// Waiting requests that go into the next prefill stage: first fit in
    /// FCFS order up to `capacity` tokens.
    pub fn prefill_batch(&self, capacity: u64) -> Vec<u32> {
        let mut used = 0u64;
        let mut batch = Vec::new();
        for &id in &self.waiting_prefill {
            let t = self.input_tokens[id as usize] as u64;
            if used + t <= capacity {
                used += t;
                batch.push(id);
            }
        }
        batch
    }

    pub fn client_of(&self, request: u32) -> Option<usize> {
        match self.status.get(request as usize)? {
            Status::Queued(_) | Status::Completed => None,
            Status::Popped(j) | Status::Waiting(j) | Status::Decoding(j) => Some(*j),
        }
    }

    /// Moves a prefilled batch from waiting to decoding.
    pub fn start_prefill(&mut self, batch: &[u32]) -> Result<(), OnlineError> {
        for &id in batch {
            match self.status.get(id as usize) {
                Some(Status::Waiting(_)) => {}
                _ => return Err(OnlineError::NotWaiting(id)),
            }
        }
        self.waiting_prefill.retain(|id| !batch.contains(id));
        for &id in batch {
            let Status::Waiting(j) = self.status[id as usize] else { unreachable!() };
            self.status[id as usize] = Status::Decoding(j);
            self.slots[j] = Slot::Decoding { request: id, decoded: 0 };
        }
        Ok(())
    }

    /// One decode round: every decoding client emits one token.
    pub fn record_round(&mut self) {
        for slot in &mut self.slots {
            if let Slot::Decoding { decoded, .. } = slot {
                *decoded += 1;
            }
        }
    }

    /// The request on `client` finished decoding; the client becomes idle.
    pub fn complete(&mut self, client: usize) -> Result<u32, OnlineError> {
        match self.slots.get(client) {
            Some(Slot::Decoding { request, .. }) => {
                let id = *request;
                self.status[id as usize] = Status::Completed;
                self.slots[client] = Slot::Idle;
                Ok(id)
            }
            Some(_) => Err(OnlineError::NotDecoding(client)),
            None => Err(OnlineError::UnknownClient(client)),
        }
    }

    fn expected_remaining(&self, request: u32, decoded: u32) -> u64 {
        self.expected_output[request as usize].saturating_sub(decoded) as u64
    }
}

/// Prefill-versus-decode choice at a bin boundary.
///
/// `C_p` is the duration of the stage the waiting batch needs; `C_d` is
/// `T^d` times the decode tokens selected by `scope`. Prefill wins only when
/// strictly cheaper; ties continue decoding.
pub fn iteration_decision(
    state: &OnlineState,
    cost: &CostModel,
    scope: DecodeCostScope,
) -> Result<IterationDecision, OnlineError> {
    let batch = state.prefill_batch(cost.max_prefill_tokens());
    let active = state.active_count();
    if batch.is_empty() && active == 0 {
        return Err(OnlineError::NothingToSchedule);
    }
    let tokens: u64 = batch.iter().map(|&id| state.input_tokens[id as usize] as u64).sum();
    let prefill_cost = if batch.is_empty() {
        0.0
    } else {
        cost.prefill_stage_time(tokens).expect("batch fits the largest level").duration_ms
    };
    let stalled: u64 = match scope {
        DecodeCostScope::Active => state.active_decode().map(|(_, id, dec)| state.expected_remaining(id, dec)).sum(),
        DecodeCostScope::Waiting => batch.iter().map(|&id| state.expected_output[id as usize] as u64).sum(),
    };
    let decode_cost = cost.decode_rate * stalled as f64;
    let (kind, forced) = if batch.is_empty() {
        (DecisionKind::Decode, true)
    } else if active == 0 {
        (DecisionKind::Prefill, true)
    } else if prefill_cost < decode_cost {
        (DecisionKind::Prefill, false)
    } else {
        (DecisionKind::Decode, false)
    };
    Ok(IterationDecision { kind, prefill_cost, decode_cost, forced })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn state(queues: Vec<Vec<u32>>, inputs: Vec<u32>, outputs: Vec<u32>) -> OnlineState {
        OnlineState::new(queues, inputs, outputs, QueueOrder::LongestFirst, true).unwrap()
    }

    #[test]
    fn own_queue_first() {
        let mut s = state(vec![vec![0], vec![]], vec![10], vec![20]);
        assert_eq!(s.remain_token(), &[30, 0]);
        let d = s.next_request(0).unwrap().unwrap();
        assert_eq!(d, Dispatch { request: 0, client: 0, stolen_from: None });
        assert_eq!(s.remain_token(), &[0, 0]);
    }

    #[test]
    fn idle_client_steals_from_most_loaded() {
        // c0 holds 900 expected tokens, c1 holds 400, c2 is empty.
        let mut s = state(vec![vec![0, 1], vec![2], vec![]], vec![100, 100, 100], vec![500, 200, 300]);
        assert_eq!(s.remain_token(), &[900, 400, 0]);
        let d = s.next_request(2).unwrap().unwrap();
        assert_eq!(d.stolen_from, Some(0));
        assert_eq!(d.request, 0, "head of c0 is its longest request");
        assert_eq!(s.remain_token(), &[300, 400, 0]);
    }

    #[test]
    fn none_when_everything_is_drained() {
        let mut s = state(vec![vec![], vec![]], vec![], vec![]);
        assert_eq!(s.next_request(0).unwrap(), None);
        assert!(s.is_drained());
    }

    #[test]
    fn busy_client_rejected() {
        let mut s = state(vec![vec![0, 1]], vec![1, 1], vec![1, 1]);
        s.dispatch(0).unwrap();
        assert_eq!(s.next_request(0), Err(OnlineError::ClientBusy(0)));
        assert_eq!(s.next_request(5), Err(OnlineError::UnknownClient(5)));
    }

    #[test]
    fn admission_rules() {
        let mut s = state(vec![vec![0, 1], vec![]], vec![5, 5], vec![3, 3]);
        s.admit(1, 1).unwrap();
        assert_eq!(s.waiting_prefill(), &[1]);
        assert_eq!(s.admit(1, 1), Err(OnlineError::DuplicateAdmission(1)));
        s.start_prefill(&[1]).unwrap();
        s.complete(1).unwrap();
        assert_eq!(s.admit(1, 1), Err(OnlineError::AlreadyCompleted(1)));
    }

    #[test]
    fn forced_decisions() {
        let cm = CostModel::default();
        let mut s = state(vec![vec![0, 1]], vec![10, 10], vec![5, 5]);
        s.dispatch(0).unwrap();
        let d = iteration_decision(&s, &cm, DecodeCostScope::Active).unwrap();
        assert_eq!((d.kind, d.forced), (DecisionKind::Prefill, true));
        s.start_prefill(&[0]).unwrap();
        let d = iteration_decision(&s, &cm, DecodeCostScope::Active).unwrap();
        assert_eq!((d.kind, d.forced), (DecisionKind::Decode, true));
        let empty = state(vec![vec![]], vec![], vec![]);
        assert_eq!(iteration_decision(&empty, &cm, DecodeCostScope::Active), Err(OnlineError::NothingToSchedule));
    }

    #[test]
    fn cost_comparison_example() {
        // Three requests mid-decode with 2000 expected tokens left in total,
        // and a 512-token request waiting for client 3.
        let cm = CostModel::default();
        let mut s = OnlineState::new(
            vec![vec![0], vec![1], vec![2], vec![3]],
            vec![1, 1, 1, 512],
            vec![700, 700, 600, 10],
            QueueOrder::AsGiven,
            false,
        )
        .unwrap();
        for j in 0..3 {
            s.dispatch(j).unwrap();
        }
        s.start_prefill(&[0, 1, 2]).unwrap();
        s.dispatch(3).unwrap();
        let d = iteration_decision(&s, &cm, DecodeCostScope::Active).unwrap();
        assert_abs_diff_eq!(d.prefill_cost, 91.56, epsilon = 1e-9);
        assert_abs_diff_eq!(d.decode_cost, 420.0, epsilon = 1e-9);
        assert_eq!(d.kind, DecisionKind::Prefill);
    }

    #[test]
    fn exact_tie_goes_to_decode() {
        // Zero-overhead level of 2 tokens at 0.21 ms/token costs 0.42 ms; two
        // expected remaining decode tokens cost 0.42 ms too.
        let cfg = crate::cost::CostConfig {
            prefill_rate_ms: 0.21,
            prefill_overhead_ms: 0.0,
            chunk_tokens: 2,
            max_levels: 1,
            ..Default::default()
        };
        let cm = CostModel::from_config(&cfg).unwrap();
        let mut s = OnlineState::new(vec![vec![0], vec![1]], vec![1, 2], vec![2, 5], QueueOrder::AsGiven, false).unwrap();
        s.dispatch(0).unwrap();
        s.start_prefill(&[0]).unwrap();
        s.dispatch(1).unwrap();
        let d = iteration_decision(&s, &cm, DecodeCostScope::Active).unwrap();
        assert_eq!(d.prefill_cost, d.decode_cost);
        assert_eq!(d.kind, DecisionKind::Decode);
        assert!(!d.forced);
    }

    #[test]
    fn waiting_scope_counts_the_batch() {
        let cm = CostModel::default();
        let mut s = OnlineState::new(vec![vec![0], vec![1]], vec![1, 30], vec![2, 100], QueueOrder::AsGiven, false).unwrap();
        s.dispatch(0).unwrap();
        s.start_prefill(&[0]).unwrap();
        s.dispatch(1).unwrap();
        let d = iteration_decision(&s, &cm, DecodeCostScope::Waiting).unwrap();
        assert_abs_diff_eq!(d.decode_cost, 21.0, epsilon = 1e-9);
        assert_eq!(d.kind, DecisionKind::Decode);
    }

    #[derive(Debug, Clone)]
    enum Op {
        Dispatch(usize),
        Admit(u32, usize),
        Prefill,
        Round,
        Complete(usize),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0usize..4).prop_map(Op::Dispatch),
            (0u32..16, 0usize..4).prop_map(|(r, c)| Op::Admit(r, c)),
            Just(Op::Prefill),
            Just(Op::Round),
            (0usize..4).prop_map(Op::Complete),
        ]
    }

    fn check_invariants(s: &OnlineState) -> Result<(), TestCaseError> {
        for j in 0..s.clients() {
            let keys: Vec<u64> = s.queue(j).map(|id| s.key(id)).collect();
            prop_assert!(keys.windows(2).all(|w| w[0] >= w[1]), "queue {} not sorted", j);
            prop_assert_eq!(s.remain_token()[j], keys.iter().sum::<u64>());
        }
        // Each request in at most one place.
        let mut places = vec![0u32; s.status.len()];
        for j in 0..s.clients() {
            for id in s.queue(j) {
                places[id as usize] += 1;
            }
        }
        for &id in s.waiting_prefill() {
            places[id as usize] += 1;
        }
        for (_, id, _) in s.active_decode() {
            places[id as usize] += 1;
        }
        for id in 0..s.status.len() as u32 {
            if s.is_completed(id) {
                places[id as usize] += 1;
            }
        }
        prop_assert!(places.iter().all(|&p| p <= 1));
        Ok(())
    }

    proptest! {
        #[test]
        fn mutations_preserve_invariants(
            inputs in prop::collection::vec(1u32..50, 16),
            outputs in prop::collection::vec(1u32..50, 16),
            ops in prop::collection::vec(op(), 0..80),
        ) {
            let queues = (0..4).map(|j| (0..16u32).filter(|i| i % 4 == j).collect()).collect();
            let mut s = OnlineState::new(queues, inputs, outputs, QueueOrder::LongestFirst, true).unwrap();
            check_invariants(&s)?;
            for op in ops {
                let _ = match op {
                    Op::Dispatch(j) => s.dispatch(j).map(|_| ()),
                    Op::Admit(r, j) => s.admit(r, j),
                    Op::Prefill => { let b = s.prefill_batch(64); s.start_prefill(&b) }
                    Op::Round => { s.record_round(); Ok(()) }
                    Op::Complete(j) => s.complete(j).map(|_| ()),
                };
                check_invariants(&s)?;
            }
        }

        #[test]
        fn stealing_is_work_conserving(sizes in prop::collection::vec(0usize..5, 1..6), probe in 0usize..6) {
            let mut next = 0u32;
            let queues: Vec<Vec<u32>> = sizes.iter().map(|&n| (0..n).map(|_| { next += 1; next - 1 }).collect()).collect();
            let n = next as usize;
            let mut s = OnlineState::new(queues, vec![3; n], vec![4; n], QueueOrder::LongestFirst, true).unwrap();
            let probe = probe % sizes.len();
            let got = s.next_request(probe).unwrap();
            prop_assert_eq!(got.is_none(), n == 0);
        }
    }
}
