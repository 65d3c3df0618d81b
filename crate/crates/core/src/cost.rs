//! Affine timing laws for prefill and decode stages.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("prefill batch over capacity: {tokens} tokens > {capacity}")]
    OverCapacity { tokens: u64, capacity: u64 },
    #[error("token count must be positive")]
    NoTokens,
    #[error("client count must be positive")]
    NoClients,
    #[error("invalid cost model: {0}")]
    Invalid(&'static str),
}

/// One prefill level: a stage at this level accepts up to `capacity` input
/// tokens and lasts `duration_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub index: usize,
    pub capacity: u64,
    pub duration_ms: f64,
}

/// Levels sorted by strictly increasing capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTable {
    entries: Vec<Level>,
}

impl LevelTable {
    /// Levels at every multiple of `chunk_tokens`, up to `max_levels`.
    pub fn chunked(chunk_tokens: u64, max_levels: usize, rate_ms: f64, overhead_ms: f64) -> Self {
        Self::from_capacities((1..=max_levels as u64).map(|l| l * chunk_tokens), rate_ms, overhead_ms)
    }

    pub fn from_capacities(caps: impl IntoIterator<Item = u64>, rate_ms: f64, overhead_ms: f64) -> Self {
        let entries = caps
            .into_iter()
            .enumerate()
            .map(|(i, capacity)| Level {
                index: i + 1,
                capacity,
                duration_ms: capacity as f64 * rate_ms + overhead_ms,
            })
            .collect();
        LevelTable { entries }
    }

    pub fn entries(&self) -> &[Level] {
        &self.entries
    }

    /// The largest level (`L` in the level set).
    pub fn largest(&self) -> &Level {
        self.entries.last().expect("level table is never empty")
    }

    pub fn level_for(&self, tokens: u64) -> Result<&Level, CostError> {
        if tokens == 0 {
            return Err(CostError::NoTokens);
        }
        let pos = self.entries.partition_point(|l| l.capacity < tokens);
        self.entries
            .get(pos)
            .ok_or(CostError::OverCapacity { tokens, capacity: self.largest().capacity })
    }
}

/// Prefill stage outcome: how long it takes and which level it runs at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrefillTiming {
    pub duration_ms: f64,
    pub level: Level,
}

/// The cost-model block of the run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    pub prefill_rate_ms: f64,
    pub prefill_overhead_ms: f64,
    pub decode_rate_ms: f64,
    pub decode_overhead_ms: f64,
    pub chunk_tokens: u64,
    pub max_levels: usize,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            prefill_rate_ms: 0.13,
            prefill_overhead_ms: 25.0,
            decode_rate_ms: 0.21,
            decode_overhead_ms: 29.0,
            chunk_tokens: 512,
            max_levels: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub prefill_rate: f64,
    pub prefill_overhead: f64,
    pub decode_rate: f64,
    pub decode_overhead: f64,
    pub levels: LevelTable,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel::from_config(&CostConfig::default()).expect("default cost config is valid")
    }
}

impl CostModel {
    pub fn from_config(cfg: &CostConfig) -> Result<Self, CostError> {
        if cfg.chunk_tokens == 0 {
            return Err(CostError::Invalid("chunk_tokens must be positive"));
        }
        if cfg.max_levels == 0 {
            return Err(CostError::Invalid("max_levels must be positive"));
        }
        let levels =
            LevelTable::chunked(cfg.chunk_tokens, cfg.max_levels, cfg.prefill_rate_ms, cfg.prefill_overhead_ms);
        Self::with_levels(cfg, levels)
    }

    /// Same affine law, but with caller-chosen level capacities. Used to hit
    /// exact token counts (a level whose capacity equals the batch size).
    pub fn with_capacities(cfg: &CostConfig, caps: &[u64]) -> Result<Self, CostError> {
        let mut sorted = caps.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.first() == Some(&0) {
            return Err(CostError::Invalid("level capacity must be positive"));
        }
        let levels = LevelTable::from_capacities(sorted, cfg.prefill_rate_ms, cfg.prefill_overhead_ms);
        Self::with_levels(cfg, levels)
    }

    fn with_levels(cfg: &CostConfig, levels: LevelTable) -> Result<Self, CostError> {
        if !positive(cfg.prefill_rate_ms) || !positive(cfg.decode_rate_ms) {
            return Err(CostError::Invalid("rates must be positive"));
        }
        if !non_negative(cfg.prefill_overhead_ms) || !non_negative(cfg.decode_overhead_ms) {
            return Err(CostError::Invalid("overheads must be non-negative"));
        }
        if levels.entries.is_empty() {
            return Err(CostError::Invalid("level table is empty"));
        }
        Ok(CostModel {
            prefill_rate: cfg.prefill_rate_ms,
            prefill_overhead: cfg.prefill_overhead_ms,
            decode_rate: cfg.decode_rate_ms,
            decode_overhead: cfg.decode_overhead_ms,
            levels,
        })
    }

    pub fn max_prefill_tokens(&self) -> u64 {
        self.levels.largest().capacity
    }

    /// Time of a prefill stage holding `total_tokens` input tokens, quantized
    /// up to the smallest level that fits.
    pub fn prefill_stage_time(&self, total_tokens: u64) -> Result<PrefillTiming, CostError> {
        let level = *self.levels.level_for(total_tokens)?;
        Ok(PrefillTiming { duration_ms: level.duration_ms, level })
    }

    /// One decode round: every active client emits exactly one token.
    pub fn decode_round_time(&self, active_clients: usize) -> Result<f64, CostError> {
        if active_clients == 0 {
            return Err(CostError::NoClients);
        }
        Ok(active_clients as f64 * self.decode_rate + self.decode_overhead)
    }

    /// `tokens` rounds at a constant batch of `clients`. Estimator only; the
    /// simulator prices every round separately.
    pub fn decode_phase_time(&self, tokens: u64, clients: usize) -> Result<f64, CostError> {
        if tokens == 0 {
            return Err(CostError::NoTokens);
        }
        Ok(tokens as f64 * self.decode_round_time(clients)?)
    }

    pub(crate) fn prefill_stage_us(&self, total_tokens: u64) -> Result<(u64, Level), CostError> {
        let t = self.prefill_stage_time(total_tokens)?;
        Ok((ms_to_us(t.duration_ms), t.level))
    }

    pub(crate) fn decode_round_us(&self, active_clients: usize) -> Result<u64, CostError> {
        Ok(ms_to_us(self.decode_round_time(active_clients)?))
    }
}

/// Simulated time is kept in integer microseconds.
fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

fn non_negative(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

pub fn ms_to_us(ms: f64) -> u64 {
    (ms * 1000.0).round() as u64
}

pub fn us_to_ms(us: u64) -> f64 {
    us as f64 / 1000.0
}
