//! Scheduling prefill and decode work for batched LLM inference across many
//! clients that share one accelerator.
//!
//! - [`workload`]: request traces and the seeded synthetic sampler.
//! - [`cost`]: affine prefill/decode stage timing.
//! - [`offline`]: client assignment (LPT and branch-and-bound), the makespan
//!   lower bound and the bin-level MIP export.
//! - [`online`]: sorted per-client queues, work stealing and the
//!   prefill-versus-decode decision.
//! - [`sim`]: the serving loop, metrics, schedule checks and Gantt output.

pub mod config;
pub mod cost;
pub mod feasibility;
pub mod offline;
pub mod online;
pub mod sim;
pub mod workload;

pub use config::RunConfig;
pub use cost::{CostConfig, CostModel};
pub use feasibility::FeasibilityReport;
pub use sim::{run, Policy, PolicyConfig, RunOutput};
pub use workload::{generate_trace, Request, SamplerParams, Trace};
