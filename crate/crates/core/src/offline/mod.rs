//! Offline request assignment, the makespan lower bound, and the full
//! bin-level MIP in LP text form.

mod assign;
mod bound;
pub mod mip;

use thiserror::Error;

pub use assign::{
    assign_auto, assign_exact, assign_lpt, branch_and_bound, decode_tokens, lpt_schedule, makespan_of,
    service_time, Assignment, BnbResult, ExactAssignment, ExactOptions, ServiceMode, DEFAULT_EXACT_CAP,
    DEFAULT_NODE_BUDGET,
};
pub use bound::{lower_bound, BoundOptions, LowerBound, PrefillRounding};

#[derive(Debug, Error, PartialEq)]
pub enum OfflineError {
    #[error("empty trace")]
    EmptyTrace,
    #[error("client count must be positive")]
    NoClients,
    #[error("instance too large: {requests} requests exceeds the cap of {cap}")]
    TooLarge { requests: usize, cap: usize },
}
