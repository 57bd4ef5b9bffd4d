//! Summary numbers computed from a trace.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::node::TimerKind;
use crate::trace::{MsgKind, TraceEvent, TraceRecord};
use crate::types::{Digest, SlotNumber, ValidatorId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockMetrics {
    pub digest: Digest,
    pub proposer: ValidatorId,
    pub sn: u64,
    pub proposed_at: u64,
    /// Commit time at the proposer, if it committed.
    pub committed_at: Option<u64>,
    pub latency: Option<u64>,
    /// Network hops from the INITIATE to the message that triggered the
    /// proposer's commit. `None` if the commit was triggered locally (timer).
    pub steps: Option<u32>,
    pub slotless: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    pub min: u64,
    pub median: u64,
    pub mean: f64,
    pub max: u64,
}

impl LatencySummary {
    fn of(mut xs: Vec<u64>) -> Self {
        if xs.is_empty() {
            return LatencySummary::default();
        }
        xs.sort_unstable();
        LatencySummary {
            count: xs.len(),
            min: xs[0],
            median: xs[xs.len() / 2],
            mean: xs.iter().sum::<u64>() as f64 / xs.len() as f64,
            max: xs[xs.len() - 1],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub end_time: u64,
    pub blocks_proposed: usize,
    /// Distinct blocks delivered by at least one correct node.
    pub blocks_delivered: usize,
    /// Distinct blocks committed by at least one correct node.
    pub blocks_committed: usize,
    /// Delivered blocks that no correct node has committed.
    pub delivered_not_committed: usize,
    pub commit_latency: LatencySummary,
    /// Step count shared by every block committed through a message chain,
    /// or `None` if blocks differ.
    pub commit_steps: Option<u32>,
    pub commit_steps_histogram: BTreeMap<u32, usize>,
    /// Committed blocks per simulated second.
    pub throughput: f64,
    pub hole_count: usize,
    pub hole_slots: Vec<u64>,
    pub slotless_count: usize,
    pub yield_count: usize,
    pub views_consumed: u64,
    pub messages_sent: usize,
    pub messages_per_committed_block: f64,
    pub blocks: Vec<BlockMetrics>,
}

pub fn compute(trace: &[TraceRecord]) -> Metrics {
    let faulty: HashSet<ValidatorId> =
        crate::trace::meta(trace).map(|m| m.faulty.iter().copied().collect()).unwrap_or_default();
    let correct = |n: Option<ValidatorId>| n.is_some_and(|n| !faulty.contains(&n));
    let mut m = Metrics { end_time: trace.last().map_or(0, |r| r.time), ..Metrics::default() };

    let mut proposals: Vec<(Digest, ValidatorId, u64, u64, u32)> = Vec::new();
    let mut seen_proposal = HashSet::new();
    let mut delivered: HashSet<Digest> = HashSet::new();
    let mut slotless: HashSet<Digest> = HashSet::new();
    let mut committed: HashSet<Digest> = HashSet::new();
    let mut own_commit: HashMap<(ValidatorId, Digest), (u64, u32)> = HashMap::new();
    let mut holes = BTreeSet::new();
    let mut views: BTreeMap<u64, u64> = BTreeMap::new();

    for r in trace {
        match &r.event {
            TraceEvent::MsgSent { msg, depth, .. } => {
                m.messages_sent += 1;
                match msg.kind {
                    MsgKind::Yield => m.yield_count += 1,
                    MsgKind::Initiate if correct(r.node) => {
                        if let (Some(id), Some(SlotNumber::Slot(s)), Some(d)) = (msg.id, msg.sn, msg.digest) {
                            if id.sender == r.node.unwrap() && seen_proposal.insert(d) {
                                proposals.push((d, id.sender, s, r.time, *depth));
                            }
                        }
                    }
                    _ => {}
                }
            }
            TraceEvent::BbcaDeliverCommit { sn, digest, .. } if correct(r.node) => {
                delivered.insert(*digest);
                if sn.is_slotless() {
                    slotless.insert(*digest);
                }
            }
            TraceEvent::Commit { digest: Some(d), depth, .. } if correct(r.node) => {
                committed.insert(*d);
                own_commit.entry((r.node.unwrap(), *d)).or_insert((r.time, *depth));
            }
            TraceEvent::Commit { slot, digest: None, .. } if correct(r.node) => {
                holes.insert(*slot);
            }
            TraceEvent::Timer { timer: TimerKind::View { slot, view } } if correct(r.node) => {
                let v = views.entry(*slot).or_insert(0);
                *v = (*v).max(view + 1);
            }
            TraceEvent::VbcParticipate { slot, .. } if correct(r.node) => {
                views.entry(*slot).or_insert(0);
            }
            _ => {}
        }
    }

    let mut latencies = Vec::new();
    for (d, proposer, sn, at, init_depth) in proposals {
        let commit = own_commit.get(&(proposer, d)).copied();
        let latency = commit.map(|(t, _)| t - at);
        let steps = commit.and_then(|(_, cd)| (cd >= init_depth).then(|| cd - init_depth + 1));
        if let Some(l) = latency {
            latencies.push(l);
        }
        if let Some(s) = steps {
            *m.commit_steps_histogram.entry(s).or_default() += 1;
        }
        m.blocks.push(BlockMetrics {
            digest: d,
            proposer,
            sn,
            proposed_at: at,
            committed_at: commit.map(|c| c.0),
            latency,
            steps,
            slotless: slotless.contains(&d),
        });
    }
    m.blocks_proposed = m.blocks.len();
    m.blocks_delivered = delivered.len();
    m.blocks_committed = committed.len();
    m.delivered_not_committed = delivered.difference(&committed).count();
    m.commit_latency = LatencySummary::of(latencies);
    m.commit_steps = match m.commit_steps_histogram.keys().collect::<Vec<_>>().as_slice() {
        [only] => Some(**only),
        _ => None,
    };
    if m.end_time > 0 {
        m.throughput = m.blocks_committed as f64 / (m.end_time as f64 / 1e6);
    }
    m.hole_count = holes.len();
    m.hole_slots = holes.into_iter().collect();
    m.slotless_count = slotless.len();
    m.views_consumed = views.values().map(|v| v.max(&1)).sum();
    if m.blocks_committed > 0 {
        m.messages_per_committed_block = m.messages_sent as f64 / m.blocks_committed as f64;
    }
    m
}
