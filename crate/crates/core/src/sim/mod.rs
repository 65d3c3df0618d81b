//! Discrete-event simulation of the serving loop, plus schedule checking,
//! metrics, Gantt export and multi-case batches.

mod batch;
mod engine;
mod gantt;
mod metrics;
mod schedule;
mod validate;

use thiserror::Error;

use crate::cost::CostError;
use crate::offline::OfflineError;
use crate::online::OnlineError;
use crate::workload::WorkloadError;

pub use batch::{run_batch, BatchConfig, BatchReport, BatchRow, BatchSummary};
pub use engine::{run, Event, EventKind, Policy, PolicyConfig, RunOutput, TieRule};
pub use gantt::{export_gantt, read_gantt_csv, segments_us, GanttFormat, Segment, SegmentKind};
pub use metrics::{compute_metrics, request_spans, Metrics};
pub use schedule::{Bin, DecodeShare, DecodeStage, Member, PrefillStage, Schedule};
pub use validate::validate_schedule;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("client count must be positive")]
    NoClients,
    #[error("case count must be positive")]
    NoCases,
    #[error("policy {} needs an offline assignment", .0.name())]
    MissingAssignment(Policy),
    #[error("assignment does not match the instance: {0}")]
    AssignmentMismatch(String),
    #[error("request {request} has {tokens} input tokens, over the largest prefill level ({capacity})")]
    InputOverCapacity { request: u32, tokens: u32, capacity: u64 },
    #[error("simulation stalled with {remaining} requests still queued")]
    Stalled { remaining: usize },
    #[error("schedule does not match the trace: {0}")]
    ScheduleMismatch(String),
    #[error("unknown gantt format {0:?} (expected svg|csv)")]
    UnknownFormat(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Online(#[from] OnlineError),
    #[error(transparent)]
    Offline(#[from] OfflineError),
}
