use serde::{Deserialize, Serialize};

use crate::cost::us_to_ms;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Member {
    pub request: u32,
    pub client: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefillStage {
    pub start_us: u64,
    pub length_us: u64,
    /// 1-based level index in the cost model's table.
    pub level: usize,
    pub members: Vec<Member>,
}

impl PrefillStage {
    pub fn end_us(&self) -> u64 {
        self.start_us + self.length_us
    }
}

/// Tokens one client decoded for one request inside a decode stage. A share
/// always covers the first `tokens` rounds of the stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeShare {
    pub client: usize,
    pub request: u32,
    pub tokens: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeStage {
    pub start_us: u64,
    pub length_us: u64,
    pub round_lengths_us: Vec<u64>,
    pub shares: Vec<DecodeShare>,
}

impl DecodeStage {
    pub fn end_us(&self) -> u64 {
        self.start_us + self.length_us
    }

    pub fn rounds(&self) -> usize {
        self.round_lengths_us.len()
    }

    /// End of the round that emitted the `tokens`-th token of a share.
    pub fn offset_end_us(&self, tokens: u32) -> u64 {
        self.start_us + self.round_lengths_us[..tokens as usize].iter().sum::<u64>()
    }

    pub fn share_of(&self, client: usize) -> Option<&DecodeShare> {
        self.shares.iter().find(|s| s.client == client)
    }
}

/// A prefill stage followed by a decode stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    /// 1-based.
    pub index: usize,
    pub prefill: PrefillStage,
    pub decode: DecodeStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub clients: usize,
    pub bins: Vec<Bin>,
    pub makespan_us: u64,
}

impl Schedule {
    pub fn makespan_ms(&self) -> f64 {
        us_to_ms(self.makespan_us)
    }
}
