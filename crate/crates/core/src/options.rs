//! Tunables shared by every node of a run.

use serde::{Deserialize, Serialize};

/// Deliberately broken protocol variants, used as negative controls for the
/// trace checker. `None` is the correct protocol.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutant {
    #[default]
    None,
    /// Echo every valid INITIATE regardless of whether its slot was already
    /// echoed for another instance.
    NoSeqnoGate,
    /// Lower the echo→ready and ready→deliver quorums to f+1.
    WeakReadyQuorum,
    /// Skip the salvage validity check in reliable broadcast and let the
    /// fallback leader ignore ready certificates.
    NoValidityGate,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolOptions {
    /// Yield immediately on an INITIATE whose slot is already taken by
    /// another echoed instance, instead of waiting for the timer.
    pub eager_yield: bool,
    /// INITIATEs waiting on missing predecessors; oldest are evicted first.
    pub parking_capacity: usize,
    /// Slot window ahead of the first uncommitted slot in which validators
    /// may propose. `None` means 16·n.
    pub lookahead: Option<u64>,
    /// Consecutive committed holes of an active validator before it is
    /// dropped from the round-robin rotation.
    pub removal_threshold: u32,
    /// Use the instant-decision consensus double instead of the in-DAG
    /// fallback.
    pub oracle_consensus: bool,
    pub mutant: Mutant,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        ProtocolOptions {
            eager_yield: false,
            parking_capacity: 10_000,
            lookahead: None,
            removal_threshold: 1,
            oracle_consensus: false,
            mutant: Mutant::None,
        }
    }
}

impl ProtocolOptions {
    pub fn lookahead_for(&self, n: usize) -> u64 {
        self.lookahead.unwrap_or(16 * n as u64).max(1)
    }
}
