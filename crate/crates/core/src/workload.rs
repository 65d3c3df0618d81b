//! Requests, traces and the synthetic trace sampler.
//!
//! Token counts are drawn from a normal distribution truncated below at one
//! token (rejection) and clamped above at the optional output cap. The
//! sampler is fully specified so that another implementation can reproduce
//! a trace bit for bit:
//!
//! * RNG: ChaCha with 8 rounds, seeded through `SeedableRng::seed_from_u64`
//!   (the seed is expanded with PCG32 as documented by `rand_core`).
//! * Uniform: `u = (next_u64 >> 11) * 2^-53` in `[0, 1)`.
//! * Normal: one Box-Muller cosine branch per draw,
//!   `z = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`, consuming two uniforms.
//! * Rounding: half up, `floor(x + 0.5)`.
//! * Order: for each request id, the input count is drawn first (redrawing
//!   while below one), then the output count.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of the RNG + transform pipeline recorded in trace metadata.
pub const SAMPLER_ID: &str = "chacha8-boxmuller-v1";

const MAX_REDRAWS: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("request count must be positive")]
    NonPositiveCount,
    #[error("standard deviation must be non-negative, got {0}")]
    NegativeStd(f64),
    #[error("output cap must be at least one token")]
    InvalidCap,
    #[error("sampler could not draw a positive token count from mean {mean} std {std}")]
    Degenerate { mean: f64, std: f64 },
    #[error("empty trace")]
    EmptyTrace,
    #[error("duplicate request id {0}")]
    DuplicateId(u32),
    #[error("request ids must be dense 0..{len}, found {id}")]
    SparseIds { id: u32, len: usize },
    #[error("request {0} has a non-positive token count")]
    NonPositiveTokens(u32),
    #[error("request {id} output {output} exceeds cap {cap}")]
    OverCap { id: u32, output: u32, cap: u32 },
    #[error("malformed trace: {0}")]
    Malformed(String),
}

/// One inference job.
///
/// `output_tokens` is the ground truth; online policies only get to see
/// `est_output_tokens` until the request finishes decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub id: u32,
    pub input_tokens: u32,
    pub output_tokens: u32,
    pub est_output_tokens: u32,
}

/// Distribution parameters of the synthetic sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerParams {
    pub input_mean: f64,
    pub input_std: f64,
    pub output_mean: f64,
    pub output_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_cap: Option<u32>,
}

impl SamplerParams {
    /// GSM8K-style prompt and answer lengths.
    pub const GSM8K: SamplerParams = SamplerParams {
        input_mean: 68.43,
        input_std: 25.04,
        output_mean: 344.83,
        output_std: 187.99,
        output_cap: Some(512),
    };

    /// Shared output estimate: the configured mean, rounded half up and kept
    /// inside `[1, cap]`.
    pub fn default_estimate(&self) -> u32 {
        let est = round_half_up(self.output_mean).max(1.0) as u32;
        match self.output_cap {
            Some(cap) => est.min(cap),
            None => est,
        }
    }

    fn validate(&self) -> Result<(), WorkloadError> {
        for std in [self.input_std, self.output_std] {
            if std.is_nan() || std < 0.0 {
                return Err(WorkloadError::NegativeStd(std));
            }
        }
        if self.output_cap == Some(0) {
            return Err(WorkloadError::InvalidCap);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<SamplerParams>,
}

/// An ordered request list with dense ids `0..len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trace {
    pub seed: u64,
    #[serde(default)]
    pub meta: TraceMeta,
    pub requests: Vec<Request>,
}

impl Trace {
    /// Builds a trace from explicit requests, checking every invariant.
    pub fn new(seed: u64, meta: TraceMeta, requests: Vec<Request>) -> Result<Self, WorkloadError> {
        let trace = Trace { seed, meta, requests };
        trace.validate()?;
        Ok(trace)
    }

    /// Convenience constructor used heavily in tests: `(input, output)` pairs,
    /// estimates equal to the truth.
    pub fn from_tokens(pairs: &[(u32, u32)]) -> Result<Self, WorkloadError> {
        let requests = pairs
            .iter()
            .enumerate()
            .map(|(id, &(input_tokens, output_tokens))| Request {
                id: id as u32,
                input_tokens,
                output_tokens,
                est_output_tokens: output_tokens,
            })
            .collect();
        Trace::new(0, TraceMeta::default(), requests)
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    /// Looks a request up by id. Ids are dense, so this is an index.
    pub fn get(&self, id: u32) -> Option<&Request> {
        self.requests.get(id as usize).filter(|r| r.id == id)
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.requests.is_empty() {
            return Err(WorkloadError::EmptyTrace);
        }
        let cap = self.meta.params.and_then(|p| p.output_cap);
        let mut seen = HashSet::with_capacity(self.requests.len());
        for r in &self.requests {
            if !seen.insert(r.id) {
                return Err(WorkloadError::DuplicateId(r.id));
            }
            if r.input_tokens == 0 || r.output_tokens == 0 || r.est_output_tokens == 0 {
                return Err(WorkloadError::NonPositiveTokens(r.id));
            }
            if let Some(cap) = cap {
                if r.output_tokens > cap {
                    return Err(WorkloadError::OverCap { id: r.id, output: r.output_tokens, cap });
                }
            }
        }
        for (pos, r) in self.requests.iter().enumerate() {
            if r.id as usize != pos {
                return Err(WorkloadError::SparseIds { id: r.id, len: self.requests.len() });
            }
        }
        Ok(())
    }

    pub fn total_input_tokens(&self) -> u64 {
        self.requests.iter().map(|r| r.input_tokens as u64).sum()
    }

    pub fn total_output_tokens(&self) -> u64 {
        self.requests.iter().map(|r| r.output_tokens as u64).sum()
    }
}

fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    fn new(seed: u64) -> Self {
        Sampler { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn uniform(&mut self) -> f64 {
        // rand's f64 standard sample is exactly (u64 >> 11) * 2^-53.
        self.rng.random::<f64>()
    }

    fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        let z = (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        mean + std * z
    }

    /// Rounded draw, redrawn while below one token.
    fn tokens(&mut self, mean: f64, std: f64) -> Result<u32, WorkloadError> {
        for _ in 0..MAX_REDRAWS {
            let x = round_half_up(self.normal(mean, std));
            if x >= 1.0 {
                return Ok(x.min(u32::MAX as f64) as u32);
            }
        }
        Err(WorkloadError::Degenerate { mean, std })
    }
}

/// Samples `count` requests. Deterministic in `(count, seed, params)`.
pub fn generate_trace(count: usize, seed: u64, params: SamplerParams) -> Result<Trace, WorkloadError> {
    if count == 0 {
        return Err(WorkloadError::NonPositiveCount);
    }
    params.validate()?;
    let est = params.default_estimate();
    let mut sampler = Sampler::new(seed);
    let mut requests = Vec::with_capacity(count);
    for id in 0..count as u32 {
        let input_tokens = sampler.tokens(params.input_mean, params.input_std)?;
        let mut output_tokens = sampler.tokens(params.output_mean, params.output_std)?;
        if let Some(cap) = params.output_cap {
            output_tokens = output_tokens.min(cap);
        }
        requests.push(Request { id, input_tokens, output_tokens, est_output_tokens: est });
    }
    Ok(Trace {
        seed,
        meta: TraceMeta { generator: Some(SAMPLER_ID.to_string()), params: Some(params) },
        requests,
    })
}

pub fn save_trace(trace: &Trace) -> String {
    serde_json::to_string_pretty(trace).expect("trace serialization is infallible")
}

pub fn load_trace(source: &str) -> Result<Trace, WorkloadError> {
    let trace: Trace =
        serde_json::from_str(source).map_err(|e| WorkloadError::Malformed(e.to_string()))?;
    trace.validate()?;
    Ok(trace)
}

/// Token-count moments. Standard deviations use the population
/// convention (divide by `count`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub count: usize,
    pub input_mean: f64,
    pub input_std: f64,
    pub output_mean: f64,
    pub output_std: f64,
}

pub fn trace_stats(trace: &Trace) -> Result<TraceStats, WorkloadError> {
    if trace.is_empty() {
        return Err(WorkloadError::EmptyTrace);
    }
    let (input_mean, input_std) = moments(trace.requests.iter().map(|r| r.input_tokens));
    let (output_mean, output_std) = moments(trace.requests.iter().map(|r| r.output_tokens));
    Ok(TraceStats { count: trace.len(), input_mean, input_std, output_mean, output_std })
}

fn moments(values: impl Iterator<Item = u32> + Clone) -> (f64, f64) {
    // Integer sums keep the mean exact for any realistic trace size.
    let (n, sum, sum_sq) = values.fold((0u64, 0u128, 0u128), |(n, s, sq), v| {
        (n + 1, s + v as u128, sq + (v as u128) * (v as u128))
    });
    let n_f = n as f64;
    let mean = sum as f64 / n_f;
    let var = (n as u128 * sum_sq - sum * sum) as f64 / (n_f * n_f);
    (mean, var.max(0.0).sqrt())
}
