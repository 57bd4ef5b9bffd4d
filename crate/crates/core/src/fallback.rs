//! Fallback consensus for stalled slots, run inside the block DAG.
//!
//! Consensus messages are block commands: FINALIZE complaints open an
//! instance for a slot, then a per-view leader embeds a PROPOSAL, validators
//! embed VOTEs that causally follow it, and COMPLAINTs move to the next view.
//! Each slot runs its own instance with its own view counter.
//!
//! A proposal of view `r` is *justified* if `r = 0`, or its causal history
//! holds f+1 votes for the view `r-1` proposal or 2f+1 complaints of view
//! `r-1`. Its value must equal the value of the highest-view acceptable
//! proposal in its history, or, if there is none, the value derived from the
//! ready certificates of the FINALIZE blocks in its history. A proposal is
//! decided once 2f+1 validators support it, the leader's proposal counting as
//! the leader's own vote.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use crate::bbca::verify_certificate;
use crate::crypto::KeyRing;
use crate::options::Mutant;
use crate::types::{
    quorum_2f1, quorum_f1, Block, Command, Digest, InstanceId, ProtocolParams, ReadyCertificate, SlotNumber,
    ValidatorId,
};

pub fn leader(params: &ProtocolParams, view: u64) -> ValidatorId {
    ValidatorId((view % params.n() as u64) as u32)
}

/// Work the node must embed into one of its next blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Duty {
    Propose { slot: u64, view: u64 },
    Vote { slot: u64, view: u64 },
    Complain { slot: u64, view: u64 },
}

impl Duty {
    pub fn slot(&self) -> u64 {
        match self {
            Duty::Propose { slot, .. } | Duty::Vote { slot, .. } | Duty::Complain { slot, .. } => *slot,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Materialized {
    Ready(Command),
    Wait,
    Moot,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FallbackOutput {
    Participate { slot: u64, value: Option<Digest>, certs: Vec<(ValidatorId, ReadyCertificate)> },
    Decide { slot: u64, value: Option<Digest>, instance: Option<InstanceId> },
    SetViewTimer { slot: u64, view: u64, after: u64 },
    Duty(Duty),
}

#[derive(Default)]
struct SlotState {
    /// First valid FINALIZE block per sender, with its certificate.
    finalize: BTreeMap<ValidatorId, (Digest, ReadyCertificate)>,
    /// First proposal per view.
    proposals: BTreeMap<u64, Digest>,
    /// Proposal digest → whether it is justified and carries the right value.
    acceptable: HashMap<Digest, bool>,
    /// view → voters whose vote block follows that view's proposal.
    supporters: BTreeMap<u64, BTreeSet<ValidatorId>>,
    complaints: BTreeMap<u64, BTreeSet<ValidatorId>>,
    /// Every consensus block for this slot, in finalization order.
    blocks: Vec<Digest>,
    participating: bool,
    view: u64,
    voted: BTreeSet<u64>,
    complained: BTreeSet<u64>,
    proposed: BTreeSet<u64>,
    decided: Option<Option<Digest>>,
}

pub struct Fallback {
    me: ValidatorId,
    params: ProtocolParams,
    keys: KeyRing,
    ignore_certs: bool,
    oracle: bool,
    stall_leader: bool,
    dag: HashMap<Digest, Arc<Block>>,
    slots: BTreeMap<u64, SlotState>,
}

/// What one block's causal history says about a slot's consensus.
#[derive(Default)]
struct History {
    finalize: BTreeMap<ValidatorId, ReadyCertificate>,
    proposals: BTreeMap<u64, Digest>,
    contains: HashSet<Digest>,
}

impl Fallback {
    pub fn new(
        me: ValidatorId,
        params: ProtocolParams,
        keys: KeyRing,
        mutant: Mutant,
        oracle: bool,
        stall_leader: bool,
    ) -> Self {
        Fallback {
            me,
            params,
            keys,
            ignore_certs: mutant == Mutant::NoValidityGate,
            oracle,
            stall_leader,
            dag: HashMap::new(),
            slots: BTreeMap::new(),
        }
    }

    pub fn view(&self, slot: u64) -> Option<u64> {
        self.slots.get(&slot).filter(|s| s.participating).map(|s| s.view)
    }

    pub fn decided(&self, slot: u64) -> Option<Option<Digest>> {
        self.slots.get(&slot).and_then(|s| s.decided)
    }

    pub fn is_participating(&self, slot: u64) -> bool {
        self.slots.get(&slot).is_some_and(|s| s.participating)
    }

    /// Consensus blocks for `slot` known locally; a duty block references all
    /// of them so its history matches what the duty was computed from.
    pub fn consensus_blocks(&self, slot: u64) -> &[Digest] {
        self.slots.get(&slot).map(|s| s.blocks.as_slice()).unwrap_or(&[])
    }

    /// Whether a proposal for `(slot, view)` is already known.
    pub fn has_proposal(&self, slot: u64, view: u64) -> bool {
        self.slots.get(&slot).is_some_and(|s| s.proposals.contains_key(&view))
    }

    /// The first known proposal block for `(slot, view)`; the validity
    /// predicate refuses any other.
    pub fn proposal_digest(&self, slot: u64, view: u64) -> Option<Digest> {
        self.slots.get(&slot).and_then(|s| s.proposals.get(&view).copied())
    }

    /// Whether a FINALIZE command is well formed: the adopted digest matches
    /// a valid certificate for that slot, or both are absent.
    pub fn finalize_is_valid(&self, slot: u64, adopted: &Option<Digest>, cert: &ReadyCertificate) -> bool {
        if cert.is_empty() {
            return adopted.is_none();
        }
        match cert.subject() {
            Some((_, SlotNumber::Slot(s), d)) => {
                s == slot && *adopted == Some(d) && verify_certificate(&self.keys, &self.params, cert)
            }
            _ => false,
        }
    }

    /// Value forced by a set of FINALIZE certificates: the block of any valid
    /// non-empty certificate (lowest digest if several), else none.
    fn certified_value<'a>(&self, certs: impl Iterator<Item = &'a ReadyCertificate>) -> Option<Digest> {
        if self.ignore_certs {
            return None;
        }
        certs.filter(|c| !c.is_empty()).filter_map(|c| c.subject().map(|(_, _, d)| d)).min()
    }

    fn certified_instance(&self, slot: u64, value: Digest) -> Option<InstanceId> {
        let st = self.slots.get(&slot)?;
        st.finalize.values().filter_map(|(_, c)| c.subject()).find(|(_, _, d)| *d == value).map(|(id, _, _)| id)
    }

    /// Feed a block once it is finalized locally (its whole history is in
    /// the DAG).
    pub fn on_block(&mut self, block: Arc<Block>) -> Vec<FallbackOutput> {
        let mut out = Vec::new();
        let digest = block.digest();
        if self.dag.contains_key(&digest) {
            return out;
        }
        self.dag.insert(digest, block.clone());
        let Some(slot) = block.command.consensus_slot() else { return out };
        let sender = block.sender;
        match &block.command {
            Command::Finalize { adopted, cert, .. } => {
                if !self.finalize_is_valid(slot, adopted, cert) {
                    return out;
                }
                let st = self.slots.entry(slot).or_default();
                st.blocks.push(digest);
                st.finalize.entry(sender).or_insert((digest, cert.clone()));
                if !st.participating && st.finalize.len() >= quorum_2f1(&self.params) {
                    self.participate(slot, &mut out);
                }
            }
            Command::Proposal { view, value, .. } => {
                if sender != leader(&self.params, *view) {
                    return out;
                }
                let st = self.slots.entry(slot).or_default();
                st.blocks.push(digest);
                if st.proposals.contains_key(view) {
                    return out;
                }
                st.proposals.insert(*view, digest);
                let ok = self.proposal_acceptable(slot, digest, *view, *value);
                let st = self.slots.get_mut(&slot).expect("slot state exists");
                st.acceptable.insert(digest, ok);
                if ok {
                    st.supporters.entry(*view).or_default().insert(sender);
                    if st.participating && *view > st.view {
                        self.enter_view(slot, *view, &mut out);
                    }
                    let st = self.slots.get_mut(&slot).expect("slot state exists");
                    if st.participating
                        && st.decided.is_none()
                        && st.view == *view
                        && !st.complained.contains(view)
                        && st.voted.insert(*view)
                    {
                        out.push(FallbackOutput::Duty(Duty::Vote { slot, view: *view }));
                    }
                    self.check_decision(slot, *view, &mut out);
                }
            }
            Command::Vote { view, .. } => {
                let st = self.slots.entry(slot).or_default();
                st.blocks.push(digest);
                let Some(p) = st.proposals.get(view).copied() else { return out };
                if st.acceptable.get(&p) != Some(&true) || !self.reaches(digest, p) {
                    return out;
                }
                let st = self.slots.get_mut(&slot).expect("slot state exists");
                st.supporters.entry(*view).or_default().insert(sender);
                self.check_decision(slot, *view, &mut out);
                self.check_leader_duty(slot, &mut out);
            }
            Command::Complaint { view, .. } => {
                let st = self.slots.entry(slot).or_default();
                st.blocks.push(digest);
                st.complaints.entry(*view).or_default().insert(sender);
                let n = st.complaints[view].len();
                if st.participating && n >= quorum_2f1(&self.params) && st.view <= *view {
                    self.enter_view(slot, view + 1, &mut out);
                }
            }
            _ => {}
        }
        out
    }

    fn participate(&mut self, slot: u64, out: &mut Vec<FallbackOutput>) {
        let st = self.slots.get_mut(&slot).expect("slot state exists");
        st.participating = true;
        let certs: Vec<(ValidatorId, ReadyCertificate)> =
            st.finalize.iter().map(|(v, (_, c))| (*v, c.clone())).collect();
        let value = self.certified_value(certs.iter().map(|(_, c)| c));
        out.push(FallbackOutput::Participate { slot, value, certs });
        if self.oracle {
            return;
        }
        // catch up on views other validators already moved through
        let st = &self.slots[&slot];
        let mut view = 0;
        for (v, c) in &st.complaints {
            if c.len() >= quorum_2f1(&self.params) && *v >= view {
                view = v + 1;
            }
        }
        for (v, p) in &st.proposals {
            if st.acceptable.get(p) == Some(&true) && *v > view {
                view = *v;
            }
        }
        self.enter_view(slot, view, out);
        // an acceptable proposal of the current view may predate participation
        let st = &self.slots[&slot];
        if let Some(p) = st.proposals.get(&view) {
            if st.acceptable.get(p) == Some(&true) && st.decided.is_none() {
                let st = self.slots.get_mut(&slot).expect("slot state exists");
                if st.voted.insert(view) {
                    out.push(FallbackOutput::Duty(Duty::Vote { slot, view }));
                }
            }
        }
        let views: Vec<u64> = self.slots[&slot].supporters.keys().copied().collect();
        for v in views {
            self.check_decision(slot, v, out);
        }
    }

    fn enter_view(&mut self, slot: u64, view: u64, out: &mut Vec<FallbackOutput>) {
        let st = self.slots.get_mut(&slot).expect("slot state exists");
        if self.oracle || st.decided.is_some() {
            return;
        }
        st.view = view;
        out.push(FallbackOutput::SetViewTimer { slot, view, after: self.params.delta() * (view + 1) });
        self.check_leader_duty(slot, out);
    }

    fn check_leader_duty(&mut self, slot: u64, out: &mut Vec<FallbackOutput>) {
        if self.oracle || self.stall_leader {
            return;
        }
        let st = self.slots.get_mut(&slot).expect("slot state exists");
        let view = st.view;
        if !st.participating || st.decided.is_some() || leader(&self.params, view) != self.me {
            return;
        }
        if st.proposed.contains(&view) || st.proposals.contains_key(&view) {
            return;
        }
        let justified = view == 0
            || st.complaints.get(&(view - 1)).map_or(0, |c| c.len()) >= quorum_2f1(&self.params)
            || st.proposals.get(&(view - 1)).is_some_and(|p| st.acceptable.get(p) == Some(&true))
                && st.supporters.get(&(view - 1)).map_or(0, |s| s.len() - 1) >= quorum_f1(&self.params);
        if justified {
            st.proposed.insert(view);
            out.push(FallbackOutput::Duty(Duty::Propose { slot, view }));
        }
    }

    pub fn on_view_timeout(&mut self, slot: u64, view: u64) -> Vec<FallbackOutput> {
        let mut out = Vec::new();
        let Some(st) = self.slots.get_mut(&slot) else { return out };
        if st.decided.is_some() || st.view != view || !st.complained.insert(view) {
            return out;
        }
        out.push(FallbackOutput::Duty(Duty::Complain { slot, view }));
        out
    }

    fn check_decision(&mut self, slot: u64, view: u64, out: &mut Vec<FallbackOutput>) {
        let st = self.slots.get_mut(&slot).expect("slot state exists");
        if st.decided.is_some() || self.oracle {
            return;
        }
        let support = st.supporters.get(&view).map_or(0, |s| s.len());
        if support < quorum_2f1(&self.params) {
            return;
        }
        let Some(p) = st.proposals.get(&view) else { return };
        let Command::Proposal { value, .. } = self.dag[p].command else { return };
        st.decided = Some(value);
        let instance = value.and_then(|d| self.certified_instance(slot, d));
        out.push(FallbackOutput::Decide { slot, value, instance });
    }

    /// Records an externally made decision (oracle mode).
    pub fn note_decision(&mut self, slot: u64, value: Option<Digest>) {
        let st = self.slots.entry(slot).or_default();
        st.decided.get_or_insert(value);
    }

    /// Command to embed for a duty in a block whose consensus references
    /// are `roots`. `Wait` if those references cannot support the duty yet,
    /// `Moot` if it no longer applies.
    pub fn materialize(&self, duty: Duty, roots: &[Digest]) -> Materialized {
        let slot = duty.slot();
        let Some(st) = self.slots.get(&slot) else { return Materialized::Moot };
        match duty {
            Duty::Propose { view, .. } => {
                if st.decided.is_some() || st.proposals.contains_key(&view) {
                    return Materialized::Moot;
                }
                match self.expected_value(roots.iter().copied(), view) {
                    Some(value) => Materialized::Ready(Command::Proposal { view, slot, value }),
                    None => Materialized::Wait,
                }
            }
            Duty::Vote { view, .. } => {
                if st.complained.contains(&view) {
                    return Materialized::Moot;
                }
                match st.proposals.get(&view) {
                    Some(p) if roots.contains(p) => Materialized::Ready(Command::Vote { view, slot }),
                    _ => Materialized::Wait,
                }
            }
            Duty::Complain { view, .. } => {
                if st.decided.is_some() {
                    return Materialized::Moot;
                }
                Materialized::Ready(Command::Complaint { view, slot })
            }
        }
    }

    /// Collects consensus information for `slot` from the causal history of
    /// `roots` (inclusive).
    fn history(&self, slot: u64, roots: impl Iterator<Item = Digest>) -> History {
        let mut h = History::default();
        let mut stack: Vec<Digest> = roots.collect();
        while let Some(d) = stack.pop() {
            if !h.contains.insert(d) {
                continue;
            }
            let Some(b) = self.dag.get(&d) else { continue };
            if b.command.consensus_slot() == Some(slot) {
                match &b.command {
                    Command::Finalize { adopted, cert, .. } if self.finalize_is_valid(slot, adopted, cert) => {
                        h.finalize.entry(b.sender).or_insert_with(|| cert.clone());
                    }
                    Command::Proposal { view, .. } if b.sender == leader(&self.params, *view) => {
                        h.proposals.entry(*view).or_insert(d);
                    }
                    _ => {}
                }
            }
            stack.extend(b.predecessors.iter().map(|r| r.digest));
        }
        h
    }

    fn reaches(&self, from: Digest, target: Digest) -> bool {
        let mut seen = HashSet::new();
        let mut stack = vec![from];
        while let Some(d) = stack.pop() {
            if d == target {
                return true;
            }
            if !seen.insert(d) {
                continue;
            }
            if let Some(b) = self.dag.get(&d) {
                stack.extend(b.predecessors.iter().map(|r| r.digest));
            }
        }
        false
    }

    /// The value a view-`view` proposal whose history is spanned by `roots`
    /// must carry; `None` (outer) if the history cannot justify any proposal.
    fn expected_value(&self, roots: impl Iterator<Item = Digest>, view: u64) -> Option<Option<Digest>> {
        let roots: Vec<Digest> = roots.collect();
        let slot = roots.iter().find_map(|d| self.dag.get(d).and_then(|b| b.command.consensus_slot()))?;
        let h = self.history(slot, roots.into_iter());
        self.expected_from_history(slot, &h, view)
    }

    fn expected_from_history(&self, slot: u64, h: &History, view: u64) -> Option<Option<Digest>> {
        if h.finalize.len() < quorum_2f1(&self.params) {
            return None;
        }
        let st = self.slots.get(&slot)?;
        if view > 0 {
            let prev = view - 1;
            let complaints =
                self.count_in_history(slot, h, |c| matches!(c, Command::Complaint { view: v, .. } if *v == prev));
            let votes = match h.proposals.get(&prev) {
                Some(p) if st.acceptable.get(p) == Some(&true) => self.votes_in_history(slot, h, prev, *p),
                _ => 0,
            };
            if complaints < quorum_2f1(&self.params) && votes < quorum_f1(&self.params) {
                return None;
            }
        }
        let locked =
            h.proposals.iter().rev().filter(|(v, _)| **v < view).find(|(_, p)| st.acceptable.get(*p) == Some(&true));
        if let Some((_, p)) = locked {
            if let Command::Proposal { value, .. } = self.dag[p].command {
                return Some(value);
            }
        }
        Some(self.certified_value(h.finalize.values()))
    }

    /// Distinct senders of consensus blocks for `slot` in the history that
    /// match `pred`.
    fn count_in_history(&self, slot: u64, h: &History, pred: impl Fn(&Command) -> bool) -> usize {
        let Some(st) = self.slots.get(&slot) else { return 0 };
        st.blocks
            .iter()
            .filter(|d| h.contains.contains(*d))
            .filter_map(|d| self.dag.get(d))
            .filter(|b| pred(&b.command))
            .map(|b| b.sender)
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Distinct voters of view `view` in the history whose vote follows
    /// `proposal`.
    fn votes_in_history(&self, slot: u64, h: &History, view: u64, proposal: Digest) -> usize {
        let Some(st) = self.slots.get(&slot) else { return 0 };
        st.blocks
            .iter()
            .filter(|d| h.contains.contains(*d))
            .filter(|d| {
                self.dag.get(*d).is_some_and(|b| matches!(b.command, Command::Vote { view: v, .. } if v == view))
            })
            .filter(|d| self.reaches(**d, proposal))
            .map(|d| self.dag[d].sender)
            .collect::<BTreeSet<_>>()
            .len()
    }

    fn proposal_acceptable(&self, slot: u64, digest: Digest, view: u64, value: Option<Digest>) -> bool {
        let block = &self.dag[&digest];
        let h = self.history(slot, block.predecessors.iter().map(|r| r.digest));
        match self.expected_from_history(slot, &h, view) {
            None => false,
            Some(_) if self.ignore_certs => true,
            Some(expected) => expected == value,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::signed;
    use crate::types::{BlockRef, EchoAttestation};

    const SLOT: u64 = 3;

    fn setup(me: u32) -> (ProtocolParams, KeyRing, Fallback) {
        let params = ProtocolParams::new(4, 1, 1000, 2).unwrap();
        let keys = KeyRing::generate(4, 5);
        let fb = Fallback::new(ValidatorId(me), params, keys.clone(), Mutant::None, false, false);
        (params, keys, fb)
    }

    fn block(sender: u32, command: Command, preds: &[Digest]) -> Arc<Block> {
        let predecessors = preds.iter().map(|d| BlockRef { slot: SlotNumber::Slotless, digest: *d }).collect();
        Arc::new(Block { sender: ValidatorId(sender), command, predecessors, payload: Vec::new() })
    }

    fn empty_finalize(sender: u32) -> Arc<Block> {
        block(sender, Command::Finalize { slot: SLOT, adopted: None, cert: ReadyCertificate::empty() }, &[])
    }

    fn feed(fb: &mut Fallback, blocks: &[Arc<Block>]) -> Vec<FallbackOutput> {
        blocks.iter().flat_map(|b| fb.on_block(b.clone())).collect()
    }

    fn decisions(out: &[FallbackOutput]) -> Vec<Option<Digest>> {
        out.iter()
            .filter_map(|o| match o {
                FallbackOutput::Decide { value, .. } => Some(*value),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn leader_rotates() {
        let (params, _, _) = setup(0);
        let leaders: Vec<u32> = (0..6).map(|v| leader(&params, v).0).collect();
        assert_eq!(leaders, vec![0, 1, 2, 3, 0, 1]);
    }

    #[test]
    fn participates_after_quorum_of_finalizes() {
        let (_, _, mut fb) = setup(1);
        let out = feed(&mut fb, &[empty_finalize(0), empty_finalize(2)]);
        assert!(out.is_empty());
        let out = feed(&mut fb, &[empty_finalize(3)]);
        assert!(matches!(out[0], FallbackOutput::Participate { slot: SLOT, value: None, .. }));
        assert!(out.contains(&FallbackOutput::SetViewTimer { slot: SLOT, view: 0, after: 1000 }));
        assert_eq!(fb.view(SLOT), Some(0));
    }

    #[test]
    fn view_zero_decides_hole() {
        let (_, _, mut fb) = setup(1);
        let fins = [empty_finalize(0), empty_finalize(2), empty_finalize(3)];
        feed(&mut fb, &fins);
        let digests: Vec<Digest> = fins.iter().map(|b| b.digest()).collect();
        let prop = block(0, Command::Proposal { view: 0, slot: SLOT, value: None }, &digests);
        let out = feed(&mut fb, std::slice::from_ref(&prop));
        assert!(out.contains(&FallbackOutput::Duty(Duty::Vote { slot: SLOT, view: 0 })));
        assert_eq!(fb.materialize(Duty::Vote { slot: SLOT, view: 0 }, &[]), Materialized::Wait);
        assert_eq!(
            fb.materialize(Duty::Vote { slot: SLOT, view: 0 }, &[prop.digest()]),
            Materialized::Ready(Command::Vote { view: 0, slot: SLOT })
        );
        let v2 = block(2, Command::Vote { view: 0, slot: SLOT }, &[prop.digest()]);
        assert!(decisions(&feed(&mut fb, &[v2])).is_empty());
        // a vote that does not follow the proposal does not count
        let stray = block(3, Command::Vote { view: 0, slot: SLOT }, &[]);
        assert!(decisions(&feed(&mut fb, &[stray])).is_empty());
        let v3 = block(3, Command::Vote { view: 0, slot: SLOT }, &[prop.digest(), digests[0]]);
        assert_eq!(decisions(&feed(&mut fb, &[v3])), vec![None]);
        assert_eq!(fb.decided(SLOT), Some(None));
    }

    #[test]
    fn proposal_with_wrong_value_or_sender_ignored() {
        let (_, _, mut fb) = setup(1);
        let fins = [empty_finalize(0), empty_finalize(2), empty_finalize(3)];
        feed(&mut fb, &fins);
        let digests: Vec<Digest> = fins.iter().map(|b| b.digest()).collect();
        let bogus = Some(Digest([9; 32]));
        let wrong_value = block(0, Command::Proposal { view: 0, slot: SLOT, value: bogus }, &digests);
        let wrong_leader = block(2, Command::Proposal { view: 0, slot: SLOT, value: None }, &digests);
        let out = feed(&mut fb, &[wrong_leader, wrong_value]);
        assert!(!out.iter().any(|o| matches!(o, FallbackOutput::Duty(Duty::Vote { .. }))));
    }

    #[test]
    fn complaints_advance_view() {
        let (_, _, mut fb) = setup(1);
        feed(&mut fb, &[empty_finalize(0), empty_finalize(2), empty_finalize(3)]);
        assert_eq!(fb.on_view_timeout(SLOT, 0), vec![FallbackOutput::Duty(Duty::Complain { slot: SLOT, view: 0 })]);
        assert!(fb.on_view_timeout(SLOT, 0).is_empty());
        let complaints: Vec<Arc<Block>> =
            [0, 2, 3].iter().map(|v| block(*v, Command::Complaint { view: 0, slot: SLOT }, &[])).collect();
        let out = feed(&mut fb, &complaints);
        assert!(out.contains(&FallbackOutput::SetViewTimer { slot: SLOT, view: 1, after: 2000 }));
        // this node leads view 1
        assert!(out.contains(&FallbackOutput::Duty(Duty::Propose { slot: SLOT, view: 1 })));
        assert_eq!(fb.view(SLOT), Some(1));
    }

    #[test]
    fn certificate_forces_value() {
        let (_, keys, mut fb) = setup(1);
        let d = Digest([4; 32]);
        let id = InstanceId { sender: ValidatorId(2), local_seq: 0 };
        let sn = SlotNumber::Slot(SLOT);
        let entries = (0..3)
            .map(|v| EchoAttestation {
                validator: ValidatorId(v),
                instance: id,
                sn,
                digest: d,
                sig: keys.signer(ValidatorId(v)).sign(&signed::echo(id, sn, &d)),
            })
            .collect();
        let cert = ReadyCertificate { entries };
        assert!(fb.finalize_is_valid(SLOT, &Some(d), &cert));
        assert!(!fb.finalize_is_valid(SLOT, &None, &cert));
        assert!(!fb.finalize_is_valid(SLOT + 1, &Some(d), &cert));
        let certified = block(3, Command::Finalize { slot: SLOT, adopted: Some(d), cert }, &[]);
        let out = feed(&mut fb, &[empty_finalize(0), empty_finalize(2), certified]);
        assert!(matches!(out[0], FallbackOutput::Participate { value: Some(v), .. } if v == d));
    }
}
