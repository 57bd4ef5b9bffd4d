//! The slot-indexed log built from broadcast deliveries and fallback
//! decisions.
//!
//! A block is *finalized* once it and all its causal predecessors are known;
//! a slot is *committed* once it and every lower slot are finalized. Slotless
//! blocks have no log position and are committed together with the first
//! committed block that references them.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::types::{Block, BlockRef, Digest, InstanceId, SlotNumber};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogEntry {
    Block(Digest),
    Hole,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LedgerOutput {
    /// `sn` is the block's slot, or slotless.
    Final {
        block: Arc<Block>,
        digest: Digest,
        sn: SlotNumber,
    },
    /// One block committed. `slot` is the log slot being committed when this
    /// happened; `own_slot` is the block's own slot if it has one.
    Commit {
        block: Arc<Block>,
        digest: Digest,
        slot: u64,
        own_slot: SlotNumber,
    },
    /// A log position became committed (`None` = hole). `already` is set if
    /// the block had been committed earlier through a reference.
    SlotCommitted {
        slot: u64,
        entry: Option<Digest>,
        already: bool,
        block: Option<Arc<Block>>,
    },
    /// Ask the broadcast layer to give up on a slot.
    FinalizeSlot(u64),
    SetCommitTimer {
        slot: u64,
        after: u64,
    },
    CancelCommitTimer,
    SetCausalTimer {
        slot: u64,
        after: u64,
    },
    Pull {
        id: Option<InstanceId>,
        digest: Digest,
    },
    /// Two different values for one slot; only reachable if safety broke.
    Conflict {
        slot: u64,
        existing: LogEntry,
        incoming: LogEntry,
    },
}

struct Known {
    block: Arc<Block>,
    /// Natural slots this block is assigned to (delivery or decision).
    slots: BTreeSet<u64>,
    finalized: bool,
    committed: bool,
    /// Highest natural slot among the block and its ancestors.
    horizon: Option<u64>,
}

pub struct Ledger {
    delta: u64,
    log: BTreeMap<u64, LogEntry>,
    known: HashMap<Digest, Known>,
    first_uncommitted: u64,
    /// missing predecessor → blocks waiting on it
    waiting_on: HashMap<Digest, BTreeSet<Digest>>,
    frontier: BTreeMap<u64, Digest>,
    frontier_seq: u64,
    delivered_instances: HashSet<InstanceId>,
    highest_known: Option<u64>,
    finalize_invoked: BTreeSet<u64>,
    commit_timer: Option<u64>,
    causal_timers: BTreeSet<u64>,
    /// Decisions whose block body is still missing: digest → slot.
    decided_missing: BTreeMap<Digest, BTreeSet<u64>>,
    finalized_count: usize,
    committed_count: usize,
}

impl Ledger {
    pub fn new(delta: u64) -> Self {
        Ledger {
            delta,
            log: BTreeMap::new(),
            known: HashMap::new(),
            first_uncommitted: 0,
            waiting_on: HashMap::new(),
            frontier: BTreeMap::new(),
            frontier_seq: 0,
            delivered_instances: HashSet::new(),
            highest_known: None,
            finalize_invoked: BTreeSet::new(),
            commit_timer: None,
            causal_timers: BTreeSet::new(),
            decided_missing: BTreeMap::new(),
            finalized_count: 0,
            committed_count: 0,
        }
    }

    pub fn first_uncommitted(&self) -> u64 {
        self.first_uncommitted
    }

    pub fn log(&self) -> &BTreeMap<u64, LogEntry> {
        &self.log
    }

    pub fn entry(&self, slot: u64) -> Option<LogEntry> {
        self.log.get(&slot).copied()
    }

    pub fn block(&self, digest: &Digest) -> Option<&Arc<Block>> {
        self.known.get(digest).map(|k| &k.block)
    }

    pub fn is_finalized(&self, digest: &Digest) -> bool {
        self.known.get(digest).is_some_and(|k| k.finalized)
    }

    pub fn is_committed(&self, digest: &Digest) -> bool {
        self.known.get(digest).is_some_and(|k| k.committed)
    }

    pub fn horizon(&self, digest: &Digest) -> Option<u64> {
        self.known.get(digest).and_then(|k| k.horizon)
    }

    pub fn instance_delivered(&self, id: InstanceId) -> bool {
        self.delivered_instances.contains(&id)
    }

    pub fn highest_known(&self) -> Option<u64> {
        self.highest_known
    }

    pub fn finalized_count(&self) -> usize {
        self.finalized_count
    }

    pub fn committed_count(&self) -> usize {
        self.committed_count
    }

    pub fn finalize_invoked(&self, slot: u64) -> bool {
        self.finalize_invoked.contains(&slot)
    }

    /// Finalized blocks this node has not referenced yet.
    pub fn frontier_len(&self) -> usize {
        self.frontier.len()
    }

    pub fn frontier_has_slotless(&self) -> bool {
        self.frontier.values().any(|d| self.known.get(d).is_some_and(|k| k.slots.is_empty()))
    }

    /// Takes the frontier entries a block at `sn` may reference (everything
    /// whose horizon is below `sn`); the rest stays for later blocks.
    pub fn take_frontier(&mut self, sn: u64) -> Vec<BlockRef> {
        let mut refs = Vec::new();
        let known = &self.known;
        self.frontier.retain(|_, d| {
            let k = &known[d];
            if k.horizon.is_some_and(|h| h >= sn) {
                return true;
            }
            refs.push(BlockRef { slot: slot_of(k), digest: *d });
            false
        });
        refs
    }

    /// Reference to a finalized block, if a block at `sn` may point to it.
    pub fn reference(&self, digest: &Digest, sn: u64) -> Option<BlockRef> {
        let k = self.known.get(digest).filter(|k| k.finalized)?;
        if k.horizon.is_some_and(|h| h >= sn) {
            return None;
        }
        Some(BlockRef { slot: slot_of(k), digest: *digest })
    }

    /// Another validator holds a valid ticket for `slot`.
    pub fn note_slot_seen(&mut self, slot: u64) -> Vec<LedgerOutput> {
        if self.highest_known.is_some_and(|h| h >= slot) {
            return Vec::new();
        }
        self.highest_known = Some(slot);
        let mut out = Vec::new();
        self.rearm_commit_timer(&mut out);
        out
    }

    /// Start causal timers for slotted predecessors that are not finalized.
    pub fn watch_predecessors(&mut self, block: &Block) -> Vec<LedgerOutput> {
        let mut out = Vec::new();
        for r in &block.predecessors {
            let SlotNumber::Slot(s) = r.slot else { continue };
            if self.is_finalized(&r.digest) || self.log.contains_key(&s) || s < self.first_uncommitted {
                continue;
            }
            if self.causal_timers.insert(s) {
                out.push(LedgerOutput::SetCausalTimer { slot: s, after: self.delta });
            }
        }
        out
    }

    pub fn on_deliver_commit(&mut self, id: InstanceId, sn: SlotNumber, block: Arc<Block>) -> Vec<LedgerOutput> {
        let mut out = Vec::new();
        self.delivered_instances.insert(id);
        let digest = block.digest();
        if let SlotNumber::Slot(s) = sn {
            if self.highest_known.is_none_or(|h| h < s) {
                self.highest_known = Some(s);
            }
        }
        self.learn(digest, block, sn.as_slot());
        let decided: Vec<u64> = self.decided_missing.remove(&digest).into_iter().flatten().collect();
        for s in decided {
            self.assign_slot(digest, s, &mut out);
        }
        out.extend(self.watch_predecessors(&self.known[&digest].block.clone()));
        self.try_finalize(digest, &mut out);
        self.rearm_commit_timer(&mut out);
        out
    }

    fn learn(&mut self, digest: Digest, block: Arc<Block>, slot: Option<u64>) {
        let k = self.known.entry(digest).or_insert_with(|| Known {
            block,
            slots: BTreeSet::new(),
            finalized: false,
            committed: false,
            horizon: None,
        });
        if let Some(s) = slot {
            k.slots.insert(s);
        }
    }

    /// Ties an already known block to a decided slot.
    fn assign_slot(&mut self, digest: Digest, slot: u64, out: &mut Vec<LedgerOutput>) {
        let k = self.known.get_mut(&digest).expect("block is known");
        k.slots.insert(slot);
        if k.finalized {
            k.horizon = k.horizon.max(Some(slot));
            self.write_log(slot, LogEntry::Block(digest), out);
        }
    }

    fn try_finalize(&mut self, digest: Digest, out: &mut Vec<LedgerOutput>) {
        let mut work = vec![digest];
        while let Some(d) = work.pop() {
            let Some(k) = self.known.get(&d) else { continue };
            if k.finalized {
                continue;
            }
            let missing: Vec<Digest> =
                k.block.predecessors.iter().map(|r| r.digest).filter(|p| !self.is_finalized(p)).collect();
            if !missing.is_empty() {
                for m in missing {
                    self.waiting_on.entry(m).or_default().insert(d);
                }
                continue;
            }
            self.finalize_block(d, out);
            if let Some(waiters) = self.waiting_on.remove(&d) {
                work.extend(waiters);
            }
        }
    }

    fn finalize_block(&mut self, digest: Digest, out: &mut Vec<LedgerOutput>) {
        let preds_horizon = {
            let k = &self.known[&digest];
            k.block.predecessors.iter().filter_map(|r| self.horizon(&r.digest)).max()
        };
        let k = self.known.get_mut(&digest).expect("block is known");
        k.finalized = true;
        k.horizon = k.slots.iter().next_back().copied().max(preds_horizon);
        let sn = k.slots.iter().next().map_or(SlotNumber::Slotless, |s| SlotNumber::Slot(*s));
        let slots: Vec<u64> = k.slots.iter().copied().collect();
        let block = k.block.clone();
        self.finalized_count += 1;
        self.frontier.insert(self.frontier_seq, digest);
        self.frontier_seq += 1;
        out.push(LedgerOutput::Final { block, digest, sn });
        for s in slots {
            self.write_log(s, LogEntry::Block(digest), out);
        }
    }

    fn write_log(&mut self, slot: u64, entry: LogEntry, out: &mut Vec<LedgerOutput>) {
        match self.log.get(&slot) {
            Some(existing) if *existing == entry => {}
            Some(existing) => {
                out.push(LedgerOutput::Conflict { slot, existing: *existing, incoming: entry });
            }
            None => {
                self.log.insert(slot, entry);
                if self.highest_known.is_none_or(|h| h < slot) {
                    self.highest_known = Some(slot);
                }
                self.advance_commit(out);
            }
        }
    }

    fn advance_commit(&mut self, out: &mut Vec<LedgerOutput>) {
        while let Some(entry) = self.log.get(&self.first_uncommitted).copied() {
            let slot = self.first_uncommitted;
            match entry {
                LogEntry::Hole => {
                    out.push(LedgerOutput::SlotCommitted { slot, entry: None, already: false, block: None });
                }
                LogEntry::Block(d) => {
                    let already = self.is_committed(&d);
                    self.commit_closure(d, slot, out);
                    let block = Some(self.known[&d].block.clone());
                    out.push(LedgerOutput::SlotCommitted { slot, entry: Some(d), already, block });
                }
            }
            self.first_uncommitted += 1;
        }
        self.rearm_commit_timer(out);
    }

    /// Commits `root` and its uncommitted ancestors, ancestors first in
    /// depth-first post-order, visiting predecessors in the order the block
    /// lists them.
    fn commit_closure(&mut self, root: Digest, slot: u64, out: &mut Vec<LedgerOutput>) {
        let mut stack: Vec<(Digest, usize)> = vec![(root, 0)];
        let mut seen: HashSet<Digest> = HashSet::new();
        seen.insert(root);
        while let Some((d, i)) = stack.pop() {
            let k = &self.known[&d];
            if k.committed {
                continue;
            }
            if let Some(r) = k.block.predecessors.get(i) {
                stack.push((d, i + 1));
                let p = r.digest;
                if !self.is_committed(&p) && seen.insert(p) {
                    stack.push((p, 0));
                }
                continue;
            }
            let k = self.known.get_mut(&d).expect("block is known");
            k.committed = true;
            self.committed_count += 1;
            let own_slot = k.slots.iter().next().map_or(SlotNumber::Slotless, |s| SlotNumber::Slot(*s));
            out.push(LedgerOutput::Commit { block: k.block.clone(), digest: d, slot, own_slot });
        }
    }

    /// The slot the commit timer watches: the first uncommitted one, once
    /// some higher slot is known and unless the fallback already has it.
    /// Later slots wait their turn, so an owner suspended over the front
    /// slot's hole can be replaced before its next slot times out.
    fn commit_timer_target(&self) -> Option<u64> {
        let s = self.first_uncommitted;
        let high = self.highest_known?;
        (s < high && !self.log.contains_key(&s) && !self.finalize_invoked.contains(&s)).then_some(s)
    }

    fn rearm_commit_timer(&mut self, out: &mut Vec<LedgerOutput>) {
        let target = self.commit_timer_target();
        if target == self.commit_timer {
            return;
        }
        self.commit_timer = target;
        match target {
            Some(slot) => out.push(LedgerOutput::SetCommitTimer { slot, after: self.delta }),
            None => out.push(LedgerOutput::CancelCommitTimer),
        }
    }

    pub fn on_commit_timeout(&mut self, slot: u64) -> Vec<LedgerOutput> {
        let mut out = Vec::new();
        if self.commit_timer != Some(slot) {
            return out;
        }
        self.commit_timer = None;
        self.invoke_finalize(slot, &mut out);
        self.rearm_commit_timer(&mut out);
        out
    }

    pub fn on_causal_timeout(&mut self, slot: u64) -> Vec<LedgerOutput> {
        let mut out = Vec::new();
        self.causal_timers.remove(&slot);
        self.invoke_finalize(slot, &mut out);
        self.rearm_commit_timer(&mut out);
        out
    }

    fn invoke_finalize(&mut self, slot: u64, out: &mut Vec<LedgerOutput>) {
        if self.log.contains_key(&slot) || !self.finalize_invoked.insert(slot) {
            return;
        }
        out.push(LedgerOutput::FinalizeSlot(slot));
    }

    /// Fallback decision for `slot`. `block` is the decided block's body if
    /// the node already holds it anywhere.
    pub fn on_vbc_decide(
        &mut self,
        slot: u64,
        value: Option<Digest>,
        block: Option<Arc<Block>>,
        instance: Option<InstanceId>,
    ) -> Vec<LedgerOutput> {
        let mut out = Vec::new();
        // a decided block counts as delivered for message numbering
        if let Some(id) = instance.filter(|_| value.is_some()) {
            self.delivered_instances.insert(id);
        }
        match value {
            None => self.write_log(slot, LogEntry::Hole, &mut out),
            Some(d) => {
                if let Some(b) = block.filter(|b| b.digest() == d) {
                    self.learn(d, b, None);
                }
                if self.known.contains_key(&d) {
                    self.assign_slot(d, slot, &mut out);
                    self.try_finalize(d, &mut out);
                } else {
                    self.decided_missing.entry(d).or_default().insert(slot);
                    out.push(LedgerOutput::Pull { id: instance, digest: d });
                }
            }
        }
        self.rearm_commit_timer(&mut out);
        out
    }

    /// A block body arrived out of band; completes pending decisions.
    pub fn on_block(&mut self, block: Arc<Block>) -> Vec<LedgerOutput> {
        let mut out = Vec::new();
        let digest = block.digest();
        let Some(slots) = self.decided_missing.remove(&digest) else { return out };
        self.learn(digest, block, None);
        for s in slots {
            self.assign_slot(digest, s, &mut out);
        }
        self.try_finalize(digest, &mut out);
        self.rearm_commit_timer(&mut out);
        out
    }

    /// JSON-friendly view of the log.
    pub fn snapshot(&self) -> Vec<LogSnapshotEntry> {
        self.log
            .iter()
            .map(|(slot, e)| match e {
                LogEntry::Hole => LogSnapshotEntry {
                    slot: *slot,
                    digest: None,
                    hole: true,
                    sender: None,
                    command: None,
                    committed: *slot < self.first_uncommitted,
                },
                LogEntry::Block(d) => {
                    let b = &self.known[d].block;
                    LogSnapshotEntry {
                        slot: *slot,
                        digest: Some(*d),
                        hole: false,
                        sender: Some(b.sender.0),
                        command: Some(command_name(&b.command).to_string()),
                        committed: *slot < self.first_uncommitted,
                    }
                }
            })
            .collect()
    }
}

fn slot_of(k: &Known) -> SlotNumber {
    k.slots.iter().next().map_or(SlotNumber::Slotless, |s| SlotNumber::Slot(*s))
}

pub fn command_name(c: &crate::types::Command) -> &'static str {
    use crate::types::Command;
    match c {
        Command::None => "NONE",
        Command::Finalize { .. } => "FINALIZE",
        Command::Proposal { .. } => "PROPOSAL",
        Command::Vote { .. } => "VOTE",
        Command::Complaint { .. } => "COMPLAINT",
        Command::Control(_) => "CONTROL",
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogSnapshotEntry {
    pub slot: u64,
    pub digest: Option<Digest>,
    pub hole: bool,
    pub sender: Option<u32>,
    pub command: Option<String>,
    pub committed: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{BlockRef, Command, ValidatorId};
    use proptest::prelude::*;

    fn block(sender: u32, tag: u8, preds: Vec<BlockRef>) -> Arc<Block> {
        Arc::new(Block { sender: ValidatorId(sender), command: Command::None, predecessors: preds, payload: vec![tag] })
    }

    fn id(sender: u32, seq: u64) -> InstanceId {
        InstanceId { sender: ValidatorId(sender), local_seq: seq }
    }

    fn committed(out: &[LedgerOutput]) -> Vec<(u64, Option<Digest>)> {
        out.iter()
            .filter_map(|o| match o {
                LedgerOutput::SlotCommitted { slot, entry, .. } => Some((*slot, *entry)),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn commits_in_slot_order() {
        let mut l = Ledger::new(100);
        let (b0, b1) = (block(0, 0, vec![]), block(1, 1, vec![]));
        assert!(committed(&l.on_deliver_commit(id(1, 0), SlotNumber::Slot(1), b1.clone())).is_empty());
        assert!(l.is_finalized(&b1.digest()));
        let out = l.on_deliver_commit(id(0, 0), SlotNumber::Slot(0), b0.clone());
        assert_eq!(committed(&out), vec![(0, Some(b0.digest())), (1, Some(b1.digest()))]);
        assert_eq!(l.first_uncommitted(), 2);
        assert!(l.instance_delivered(id(1, 0)));
    }

    #[test]
    fn hole_unblocks_later_slots() {
        let mut l = Ledger::new(100);
        let b1 = block(1, 1, vec![]);
        l.on_deliver_commit(id(1, 0), SlotNumber::Slot(1), b1.clone());
        let out = l.on_vbc_decide(0, None, None, None);
        assert_eq!(committed(&out), vec![(0, None), (1, Some(b1.digest()))]);
        assert_eq!(l.entry(0), Some(LogEntry::Hole));
    }

    #[test]
    fn waits_for_predecessors() {
        let mut l = Ledger::new(100);
        let anc = block(2, 9, vec![]);
        let child = block(0, 0, vec![BlockRef { slot: SlotNumber::Slotless, digest: anc.digest() }]);
        let out = l.on_deliver_commit(id(0, 0), SlotNumber::Slot(0), child.clone());
        assert!(committed(&out).is_empty());
        assert!(!l.is_finalized(&child.digest()));
        let out = l.on_deliver_commit(id(2, 0), SlotNumber::Slotless, anc.clone());
        assert_eq!(committed(&out), vec![(0, Some(child.digest()))]);
        // the slotless ancestor commits with the block that references it
        assert!(l.is_committed(&anc.digest()));
        let commits: Vec<Digest> = out
            .iter()
            .filter_map(|o| match o {
                LedgerOutput::Commit { digest, .. } => Some(*digest),
                _ => None,
            })
            .collect();
        assert_eq!(commits, vec![anc.digest(), child.digest()]);
    }

    #[test]
    fn stalled_slot_finalized_once() {
        let mut l = Ledger::new(100);
        let out = l.on_deliver_commit(id(1, 0), SlotNumber::Slot(1), block(1, 1, vec![]));
        assert!(out.contains(&LedgerOutput::SetCommitTimer { slot: 0, after: 100 }));
        let out = l.on_commit_timeout(0);
        assert!(out.contains(&LedgerOutput::FinalizeSlot(0)));
        assert!(l.finalize_invoked(0));
        assert!(!l.on_causal_timeout(0).contains(&LedgerOutput::FinalizeSlot(0)));
    }

    #[test]
    fn decision_for_unknown_block_pulls() {
        let mut l = Ledger::new(100);
        let b = block(3, 3, vec![]);
        let out = l.on_vbc_decide(0, Some(b.digest()), None, Some(id(3, 0)));
        assert!(out.contains(&LedgerOutput::Pull { id: Some(id(3, 0)), digest: b.digest() }));
        // a decided block counts as delivered for message numbering
        assert!(l.instance_delivered(id(3, 0)));
        assert_eq!(committed(&l.on_block(b.clone())), vec![(0, Some(b.digest()))]);
    }

    #[test]
    fn conflicting_value_reported() {
        let mut l = Ledger::new(100);
        l.on_deliver_commit(id(0, 0), SlotNumber::Slot(0), block(0, 0, vec![]));
        let out = l.on_vbc_decide(0, None, None, None);
        assert!(out.iter().any(|o| matches!(o, LedgerOutput::Conflict { slot: 0, .. })));
    }

    proptest! {
        /// Any delivery order of independent slotted blocks commits every
        /// slot exactly once, in slot order.
        #[test]
        fn commit_order_is_slot_order(order in Just((0u64..12).collect::<Vec<_>>()).prop_shuffle(), holes in prop::collection::btree_set(0u64..12, 0..4)) {
            let mut l = Ledger::new(100);
            let mut seen = Vec::new();
            for s in order {
                let out = if holes.contains(&s) {
                    l.on_vbc_decide(s, None, None, None)
                } else {
                    l.on_deliver_commit(id(0, s), SlotNumber::Slot(s), block(0, s as u8, vec![]))
                };
                seen.extend(committed(&out).into_iter().map(|(slot, e)| (slot, e.is_none())));
            }
            let expect: Vec<(u64, bool)> = (0..12).map(|s| (s, holes.contains(&s))).collect();
            prop_assert_eq!(seen, expect);
        }
    }
}
