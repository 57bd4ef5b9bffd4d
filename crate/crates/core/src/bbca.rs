//! Slot-numbered consistent broadcast with a commit-adopt finalize hook.
//!
//! One [`Bbca`] machine runs per node. Handlers consume one message or timer
//! and return an ordered list of effects; nothing here touches the network
//! or the clock directly.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use crate::crypto::{KeyRing, Signature, Signer};
use crate::encoding::signed;
use crate::error::ProtocolError;
use crate::options::{Mutant, ProtocolOptions};
use crate::types::{
    quorum_2f1, quorum_f1, Block, Digest, EchoAttestation, InstanceId, ProtocolMessage, ProtocolParams,
    ReadyCertificate, SignedYield, SlotNumber, TicketGrant, ValidatorId,
};

/// Outcome of the external validity predicate on a proposed block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Valid,
    Invalid,
    /// Not decidable yet, typically because predecessors are missing.
    Pending,
}

/// External validity predicate consulted before echoing.
pub trait Predicate {
    fn check_initiate(&self, id: InstanceId, sn: u64, block: &Block, ticket: Option<&TicketGrant>) -> Verdict;
}

#[derive(Clone, Debug, PartialEq)]
pub enum BbcaOutput {
    DeliverCommit {
        id: InstanceId,
        sn: SlotNumber,
        block: Arc<Block>,
    },
    DeliverAdopt {
        sn: u64,
        digest: Option<Digest>,
        block: Option<Arc<Block>>,
        cert: ReadyCertificate,
    },
    Send {
        to: ValidatorId,
        msg: ProtocolMessage,
    },
    Broadcast {
        msg: ProtocolMessage,
    },
    SetTimer {
        id: InstanceId,
        after: u64,
    },
    CancelTimer {
        id: InstanceId,
    },
    /// Salvage a stuck instance through reliable broadcast.
    VrbBcast {
        id: InstanceId,
        sn: SlotNumber,
        block: Arc<Block>,
        yields: Vec<SignedYield>,
    },
}

/// Period, in Δ, between retransmissions of an undelivered own instance.
const RETRANSMIT_FACTOR: u64 = 4;

#[derive(Clone, Debug, Default)]
struct Instance {
    /// `(sn, digest)` of the first INITIATE accepted from the sender.
    proposal: Option<(u64, Digest)>,
    ticket: Option<TicketGrant>,
    own_block: Option<Arc<Block>>,
    own_initiate: Option<ProtocolMessage>,
    own_sn: Option<u64>,
    /// The fallback put this block in its slot; the ledger has it even if
    /// the broadcast itself is still pending.
    settled: bool,
    /// The fallback settled our slot otherwise; salvage slotless.
    reclaim: bool,
    salvaged_sn: Option<SlotNumber>,
    timer_armed: bool,
    sent_echo: bool,
    sent_ready: bool,
    yielded: bool,
    salvaged: bool,
    parked: bool,
    decided: Option<(SlotNumber, Digest)>,
    delivered: bool,
    echoes: BTreeMap<ValidatorId, (SlotNumber, Digest, Signature)>,
    readys: BTreeMap<ValidatorId, (SlotNumber, Digest)>,
    yields: BTreeMap<ValidatorId, SignedYield>,
    checkpoints: BTreeMap<ValidatorId, (SlotNumber, Digest)>,
    ready_cert: ReadyCertificate,
}

/// Announced adopts for one slot. A sender counts as empty if any of its
/// notes was.
#[derive(Default)]
struct AdoptTally {
    empty: BTreeSet<ValidatorId>,
    seen: BTreeSet<ValidatorId>,
}

pub struct Bbca {
    me: ValidatorId,
    params: ProtocolParams,
    keys: KeyRing,
    signer: Signer,
    eager_yield: bool,
    parking_capacity: usize,
    mutant: Mutant,
    instances: BTreeMap<InstanceId, Instance>,
    seqno_echoed: BTreeSet<u64>,
    slot_finalized: BTreeSet<u64>,
    ready_cert_per_sn: BTreeMap<u64, ReadyCertificate>,
    adopts: BTreeMap<u64, AdoptTally>,
    next_local_seq: u64,
    blocks: HashMap<Digest, Arc<Block>>,
    /// Decided instances whose block body has not arrived yet.
    awaiting: BTreeMap<Digest, BTreeSet<InstanceId>>,
    parked: VecDeque<InstanceId>,
}

/// Checks every echo signature of a non-empty certificate, plus its shape.
pub fn verify_certificate(keys: &KeyRing, params: &ProtocolParams, cert: &ReadyCertificate) -> bool {
    cert.is_well_formed(params)
        && cert
            .entries
            .iter()
            .all(|e| e.sig.signer == e.validator && keys.verify(&e.sig, &signed::echo(e.instance, e.sn, &e.digest)))
}

/// Structural and cryptographic validity of a YIELD, including its
/// embedded certificate.
pub fn verify_yield(keys: &KeyRing, params: &ProtocolParams, y: &SignedYield) -> bool {
    if !params.contains(y.from)
        || y.sig.signer != y.from
        || !keys.verify(&y.sig, &signed::yield_msg(y.id, y.sn, &y.digest, &y.cert))
    {
        return false;
    }
    if y.cert.is_empty() {
        return true;
    }
    y.cert.subject() == Some((y.id, y.sn, y.digest))
        && y.sn.as_slot().is_some()
        && verify_certificate(keys, params, &y.cert)
}

impl Bbca {
    pub fn new(params: ProtocolParams, keys: KeyRing, signer: Signer, opts: &ProtocolOptions) -> Self {
        Bbca {
            me: signer.id(),
            params,
            keys,
            signer,
            eager_yield: opts.eager_yield,
            parking_capacity: opts.parking_capacity,
            mutant: opts.mutant,
            instances: BTreeMap::new(),
            seqno_echoed: BTreeSet::new(),
            slot_finalized: BTreeSet::new(),
            ready_cert_per_sn: BTreeMap::new(),
            adopts: BTreeMap::new(),
            next_local_seq: 0,
            blocks: HashMap::new(),
            awaiting: BTreeMap::new(),
            parked: VecDeque::new(),
        }
    }

    pub fn me(&self) -> ValidatorId {
        self.me
    }

    pub fn next_local_seq(&self) -> u64 {
        self.next_local_seq
    }

    /// Burns a local sequence number so no honest instance reuses it.
    pub fn reserve_seq(&mut self) -> u64 {
        let s = self.next_local_seq;
        self.next_local_seq += 1;
        s
    }

    pub fn is_slot_finalized(&self, sn: u64) -> bool {
        self.slot_finalized.contains(&sn)
    }

    pub fn block(&self, digest: &Digest) -> Option<&Arc<Block>> {
        self.blocks.get(digest)
    }

    pub fn is_delivered(&self, id: InstanceId) -> bool {
        self.instances.get(&id).is_some_and(|i| i.delivered)
    }

    /// Own instances neither delivered nor finalized locally.
    pub fn outstanding_own(&self) -> usize {
        self.instances
            .range(InstanceId { sender: self.me, local_seq: 0 }..=InstanceId { sender: self.me, local_seq: u64::MAX })
            .filter(|(_, i)| i.own_block.is_some() && !i.delivered && !i.settled)
            .filter(|(_, i)| !i.own_sn.is_some_and(|s| self.slot_finalized.contains(&s)))
            .count()
    }

    fn echo_quorum(&self) -> usize {
        match self.mutant {
            Mutant::WeakReadyQuorum => quorum_f1(&self.params),
            _ => quorum_2f1(&self.params),
        }
    }

    pub fn bcast(
        &mut self,
        sn: u64,
        block: Arc<Block>,
        ticket: Option<TicketGrant>,
    ) -> Result<(InstanceId, Vec<BbcaOutput>), ProtocolError> {
        if self.slot_finalized.contains(&sn) {
            return Err(ProtocolError::SlotAlreadyFinalized(sn));
        }
        let id = InstanceId { sender: self.me, local_seq: self.next_local_seq };
        self.next_local_seq += 1;
        let digest = block.digest();
        self.blocks.insert(digest, block.clone());
        let inst = self.instances.entry(id).or_default();
        inst.own_block = Some(block.clone());
        let sig = self.signer.sign(&signed::initiate(id, SlotNumber::Slot(sn), &digest));
        let msg = ProtocolMessage::Initiate { id, sn: SlotNumber::Slot(sn), block, ticket, sig };
        inst.own_initiate = Some(msg.clone());
        inst.own_sn = Some(sn);
        inst.timer_armed = true;
        let timer = BbcaOutput::SetTimer { id, after: self.params.delta() };
        Ok((id, vec![BbcaOutput::Broadcast { msg }, timer]))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn on_initiate(
        &mut self,
        from: ValidatorId,
        id: InstanceId,
        sn: SlotNumber,
        block: Arc<Block>,
        ticket: Option<TicketGrant>,
        sig: &Signature,
        pred: &dyn Predicate,
    ) -> Vec<BbcaOutput> {
        let mut out = Vec::new();
        let Some(s) = sn.as_slot() else { return out };
        if id.sender != from || block.sender != from {
            return out;
        }
        let digest = block.digest();
        if sig.signer != from || !self.keys.verify(sig, &signed::initiate(id, sn, &digest)) {
            return out;
        }
        let delta = self.params.delta();
        let inst = self.instances.entry(id).or_default();
        if inst.proposal.is_some() {
            // duplicate, or a conflicting INITIATE from an equivocating sender
            return out;
        }
        inst.proposal = Some((s, digest));
        inst.ticket = ticket;
        self.blocks.entry(digest).or_insert(block);
        if !inst.timer_armed && inst.decided.is_none() {
            inst.timer_armed = true;
            out.push(BbcaOutput::SetTimer { id, after: delta });
        }
        self.try_echo(id, pred, &mut out);
        out
    }

    fn try_echo(&mut self, id: InstanceId, pred: &dyn Predicate, out: &mut Vec<BbcaOutput>) {
        let gate_on = self.mutant != Mutant::NoSeqnoGate;
        let Some(inst) = self.instances.get(&id) else { return };
        let Some((s, digest)) = inst.proposal else { return };
        if inst.sent_echo || inst.yielded || self.slot_finalized.contains(&s) {
            return;
        }
        if gate_on && self.seqno_echoed.contains(&s) {
            if self.eager_yield && inst.decided.is_none() {
                self.yield_instance(id, out);
            }
            return;
        }
        let Some(block) = self.blocks.get(&digest).cloned() else { return };
        match pred.check_initiate(id, s, &block, inst.ticket.as_ref()) {
            Verdict::Invalid => {}
            Verdict::Pending => self.park(id),
            Verdict::Valid => {
                let inst = self.instances.get_mut(&id).expect("instance exists");
                inst.sent_echo = true;
                inst.parked = false;
                self.seqno_echoed.insert(s);
                let sn = SlotNumber::Slot(s);
                let sig = self.signer.sign(&signed::echo(id, sn, &digest));
                out.push(BbcaOutput::Broadcast { msg: ProtocolMessage::Echo { id, sn, digest, sig } });
            }
        }
    }

    fn park(&mut self, id: InstanceId) {
        let inst = self.instances.get_mut(&id).expect("instance exists");
        if inst.parked {
            return;
        }
        inst.parked = true;
        self.parked.push_back(id);
        while self.parked.len() > self.parking_capacity {
            if let Some(old) = self.parked.pop_front() {
                if let Some(i) = self.instances.get_mut(&old) {
                    i.parked = false;
                }
            }
        }
    }

    /// Re-evaluates parked INITIATEs; call after anything that may change
    /// the predicate's answer.
    pub fn retry_parked(&mut self, pred: &dyn Predicate) -> Vec<BbcaOutput> {
        let mut out = Vec::new();
        let queue: Vec<InstanceId> = self.parked.drain(..).collect();
        for id in &queue {
            if let Some(i) = self.instances.get_mut(id) {
                i.parked = false;
            }
        }
        for id in queue {
            self.try_echo(id, pred, &mut out);
        }
        out
    }

    pub fn parked_len(&self) -> usize {
        self.parked.len()
    }

    fn verify_from(&self, from: ValidatorId, sig: &Signature, msg: &[u8]) -> bool {
        sig.signer == from && self.params.contains(from) && self.keys.verify(sig, msg)
    }

    pub fn on_echo(
        &mut self,
        from: ValidatorId,
        id: InstanceId,
        sn: SlotNumber,
        digest: Digest,
        sig: Signature,
    ) -> Vec<BbcaOutput> {
        let mut out = Vec::new();
        let Some(s) = sn.as_slot() else { return out };
        if !self.verify_from(from, &sig, &signed::echo(id, sn, &digest)) {
            return out;
        }
        let quorum = self.echo_quorum();
        let inst = self.instances.entry(id).or_default();
        if inst.echoes.contains_key(&from) {
            return out;
        }
        inst.echoes.insert(from, (sn, digest, sig));
        if inst.sent_ready || inst.yielded || self.slot_finalized.contains(&s) {
            return out;
        }
        let matching: Vec<EchoAttestation> = inst
            .echoes
            .iter()
            .filter(|(_, (esn, ed, _))| *esn == sn && *ed == digest)
            .map(|(v, (_, _, sig))| EchoAttestation { validator: *v, instance: id, sn, digest, sig: *sig })
            .collect();
        if matching.len() < quorum {
            return out;
        }
        inst.sent_ready = true;
        inst.ready_cert = ReadyCertificate { entries: matching };
        self.ready_cert_per_sn.entry(s).or_insert_with(|| inst.ready_cert.clone());
        let sig = self.signer.sign(&signed::ready(id, sn, &digest));
        out.push(BbcaOutput::Broadcast { msg: ProtocolMessage::Ready { id, sn, digest, sig } });
        out
    }

    pub fn on_ready(
        &mut self,
        from: ValidatorId,
        id: InstanceId,
        sn: SlotNumber,
        digest: Digest,
        sig: Signature,
    ) -> Vec<BbcaOutput> {
        let mut out = Vec::new();
        if sn.is_slotless() {
            return out;
        }
        if !self.verify_from(from, &sig, &signed::ready(id, sn, &digest)) {
            return out;
        }
        let quorum = self.echo_quorum();
        let inst = self.instances.entry(id).or_default();
        if inst.readys.contains_key(&from) {
            return out;
        }
        inst.readys.insert(from, (sn, digest));
        // a ready quorum proves commitment even after this node finalized
        // the slot: every adopt quorum then carries the same certificate
        if inst.decided.is_some() {
            return out;
        }
        let matching = inst.readys.values().filter(|(r, d)| *r == sn && *d == digest).count();
        if matching >= quorum {
            self.decide(id, sn, digest, &mut out);
        }
        out
    }

    fn decide(&mut self, id: InstanceId, sn: SlotNumber, digest: Digest, out: &mut Vec<BbcaOutput>) {
        let inst = self.instances.get_mut(&id).expect("instance exists");
        inst.decided = Some((sn, digest));
        if inst.timer_armed {
            out.push(BbcaOutput::CancelTimer { id });
        }
        if self.blocks.contains_key(&digest) {
            self.emit_deliver(id, out);
        } else {
            self.awaiting.entry(digest).or_default().insert(id);
            out.push(BbcaOutput::Broadcast { msg: ProtocolMessage::Pull { id, digest } });
        }
    }

    fn emit_deliver(&mut self, id: InstanceId, out: &mut Vec<BbcaOutput>) {
        let inst = self.instances.get_mut(&id).expect("instance exists");
        let Some((sn, digest)) = inst.decided else { return };
        if inst.delivered {
            return;
        }
        let Some(block) = self.blocks.get(&digest).cloned() else { return };
        inst.delivered = true;
        out.push(BbcaOutput::DeliverCommit { id, sn, block });
        let sig = self.signer.sign(&signed::checkpoint(id, sn, &digest));
        out.push(BbcaOutput::Broadcast { msg: ProtocolMessage::Checkpoint { id, sn, digest, sig } });
    }

    pub fn on_instance_timeout(&mut self, id: InstanceId) -> Vec<BbcaOutput> {
        let mut out = Vec::new();
        let Some(inst) = self.instances.get(&id) else { return out };
        if inst.decided.is_none() && !inst.yielded {
            self.yield_instance(id, &mut out);
        }
        // keep an undelivered own block alive: peers that missed the
        // INITIATE or our YIELD can still yield and enable salvage
        let inst = &self.instances[&id];
        if id.sender == self.me && !inst.delivered && !inst.salvaged {
            if let Some(msg) = inst.own_initiate.clone() {
                out.push(BbcaOutput::Broadcast { msg });
            }
            if let Some(y) = inst.yields.get(&self.me).cloned() {
                let msg = ProtocolMessage::Yield { id, sn: y.sn, digest: y.digest, cert: y.cert, sig: y.sig };
                out.push(BbcaOutput::Broadcast { msg });
            }
            out.push(BbcaOutput::SetTimer { id, after: RETRANSMIT_FACTOR * self.params.delta() });
        }
        out
    }

    /// What this node vouches for in a YIELD: its ready certificate subject,
    /// else the INITIATE it saw, else an `(sn, digest)` that f+1 yields agree
    /// on.
    fn yield_subject(&self, inst: &Instance) -> Option<(SlotNumber, Digest)> {
        if let Some((_, sn, d)) = inst.ready_cert.subject() {
            return Some((sn, d));
        }
        if let Some((s, d)) = inst.proposal {
            return Some((SlotNumber::Slot(s), d));
        }
        let mut counts: BTreeMap<(SlotNumber, Digest), usize> = BTreeMap::new();
        for y in inst.yields.values() {
            *counts.entry((y.sn, y.digest)).or_default() += 1;
        }
        counts.into_iter().find(|(_, c)| *c >= quorum_f1(&self.params)).map(|(k, _)| k)
    }

    fn yield_instance(&mut self, id: InstanceId, out: &mut Vec<BbcaOutput>) {
        let inst = &self.instances[&id];
        let Some((sn, digest)) = self.yield_subject(inst) else { return };
        let cert = inst.ready_cert.clone();
        let sig = self.signer.sign(&signed::yield_msg(id, sn, &digest, &cert));
        let inst = self.instances.get_mut(&id).expect("instance exists");
        inst.yielded = true;
        if inst.timer_armed && inst.decided.is_none() {
            out.push(BbcaOutput::CancelTimer { id });
        }
        out.push(BbcaOutput::Broadcast { msg: ProtocolMessage::Yield { id, sn, digest, cert, sig } });
    }

    /// Structural and cryptographic validity of a YIELD, including its
    /// embedded certificate.
    pub fn yield_is_valid(&self, y: &SignedYield) -> bool {
        verify_yield(&self.keys, &self.params, y)
    }

    pub fn on_yield(
        &mut self,
        from: ValidatorId,
        id: InstanceId,
        sn: SlotNumber,
        digest: Digest,
        cert: ReadyCertificate,
        sig: Signature,
    ) -> Vec<BbcaOutput> {
        let mut out = Vec::new();
        let y = SignedYield { from, id, sn, digest, cert, sig };
        if !self.params.contains(from) || !self.yield_is_valid(&y) {
            return out;
        }
        let inst = self.instances.entry(id).or_default();
        if inst.yields.contains_key(&from) {
            return out;
        }
        inst.yields.insert(from, y);

        let amplify = !inst.yielded && inst.decided.is_none() && inst.yields.len() >= quorum_f1(&self.params);
        if amplify {
            self.yield_instance(id, &mut out);
        }
        if id.sender == self.me {
            self.try_salvage(id, &mut out);
        }
        out
    }

    /// Sender side: with 2f+1 yields for its own block, re-broadcast it
    /// through reliable broadcast, keeping the slot only if some yield proves
    /// the block may have been delivered with it.
    ///
    /// This runs even if the sender itself already delivered the instance:
    /// other correct nodes may still be stuck, and the salvage is what brings
    /// them along.
    fn try_salvage(&mut self, id: InstanceId, out: &mut Vec<BbcaOutput>) {
        let inst = self.instances.get_mut(&id).expect("instance exists");
        let Some(block) = inst.own_block.clone() else { return };
        if inst.salvaged {
            return;
        }
        let digest = block.digest();
        let yields: Vec<SignedYield> = inst.yields.values().filter(|y| y.digest == digest).cloned().collect();
        if yields.len() < quorum_2f1(&self.params) {
            return;
        }
        inst.salvaged = true;
        let sn = match yields.iter().find(|y| !y.cert.is_empty()) {
            Some(y) if !inst.reclaim => y.sn,
            _ => SlotNumber::Slotless,
        };
        inst.salvaged_sn = Some(sn);
        out.push(BbcaOutput::VrbBcast { id, sn, block, yields });
    }

    pub fn on_checkpoint(
        &mut self,
        from: ValidatorId,
        id: InstanceId,
        sn: SlotNumber,
        digest: Digest,
        sig: Signature,
    ) -> Vec<BbcaOutput> {
        let mut out = Vec::new();
        if !self.verify_from(from, &sig, &signed::checkpoint(id, sn, &digest)) {
            return out;
        }
        let inst = self.instances.entry(id).or_default();
        if inst.checkpoints.contains_key(&from) {
            return out;
        }
        inst.checkpoints.insert(from, (sn, digest));
        if inst.decided.is_some() {
            return out;
        }
        let matching = inst.checkpoints.values().filter(|(s, d)| *s == sn && *d == digest).count();
        if matching >= quorum_f1(&self.params) {
            self.decide(id, sn, digest, &mut out);
        }
        out
    }

    /// Stop participating in slot `sn` and expose what this node knows about
    /// it. Idempotent. `salvage_cert` is the certificate of a slotted salvage
    /// for `sn` this node already echoed: that salvage may deliver, so the
    /// adopt must not claim the slot is empty.
    pub fn on_finalize(&mut self, sn: u64, salvage_cert: Option<ReadyCertificate>) -> Vec<BbcaOutput> {
        if !self.slot_finalized.insert(sn) {
            return Vec::new();
        }
        if let Some(c) = salvage_cert {
            self.ready_cert_per_sn.entry(sn).or_insert(c);
        }
        let cert = self.ready_cert_per_sn.get(&sn).cloned().unwrap_or_default();
        let digest = cert.subject().map(|(_, _, d)| d);
        let block = digest.and_then(|d| self.blocks.get(&d).cloned());
        let sig = self.signer.sign(&signed::adopt_note(sn, &cert));
        let mut out = vec![
            BbcaOutput::DeliverAdopt { sn, digest, block, cert: cert.clone() },
            BbcaOutput::Broadcast { msg: ProtocolMessage::AdoptNote { sn, cert, sig } },
        ];
        out.extend(self.note_adopt(self.me, sn, digest.is_none()));
        out
    }

    pub fn on_adopt_note(
        &mut self,
        from: ValidatorId,
        sn: u64,
        cert: ReadyCertificate,
        sig: Signature,
    ) -> Vec<BbcaOutput> {
        if from == self.me || !self.verify_from(from, &sig, &signed::adopt_note(sn, &cert)) {
            return Vec::new();
        }
        let valid = cert.is_empty()
            || (cert.subject().is_some_and(|(_, s, _)| s == SlotNumber::Slot(sn))
                && verify_certificate(&self.keys, &self.params, &cert));
        if !valid {
            return Vec::new();
        }
        self.note_adopt(from, sn, cert.is_empty())
    }

    fn note_adopt(&mut self, from: ValidatorId, sn: u64, empty: bool) -> Vec<BbcaOutput> {
        let t = self.adopts.entry(sn).or_default();
        t.seen.insert(from);
        if !empty || !t.empty.insert(from) || t.empty.len() < quorum_2f1(&self.params) {
            return Vec::new();
        }
        // an all-empty adopt quorum rules out any delivery at sn
        self.reclaim_slot(sn)
    }

    /// `(validators that announced an empty adopt, validators that announced
    /// any)` for `sn`.
    pub fn adopt_tally(&self, sn: u64) -> (usize, usize) {
        self.adopts.get(&sn).map_or((0, 0), |t| (t.empty.len(), t.seen.len()))
    }

    pub fn on_vrb_deliver(&mut self, id: InstanceId, sn: SlotNumber, block: Arc<Block>) -> Vec<BbcaOutput> {
        let mut out = Vec::new();
        let digest = block.digest();
        self.blocks.entry(digest).or_insert(block);
        let inst = self.instances.entry(id).or_default();
        if inst.decided.is_some() {
            return out;
        }
        inst.decided = Some((sn, digest));
        if inst.timer_armed && !inst.yielded {
            out.push(BbcaOutput::CancelTimer { id });
        }
        self.emit_deliver(id, &mut out);
        out
    }

    /// A full block arrived out of band (pull reply, salvage payload).
    pub fn on_block(&mut self, block: Arc<Block>) -> Vec<BbcaOutput> {
        let mut out = Vec::new();
        let digest = block.digest();
        self.blocks.entry(digest).or_insert(block);
        if let Some(ids) = self.awaiting.remove(&digest) {
            for id in ids {
                self.emit_deliver(id, &mut out);
            }
        }
        out
    }

    /// Whether this node finalized `sn` with an empty adopt.
    pub fn adopted_empty(&self, sn: u64) -> bool {
        self.slot_finalized.contains(&sn) && !self.ready_cert_per_sn.contains_key(&sn)
    }

    /// The fallback settled `sn` with `value`. An own undelivered block that
    /// lost the slot can only be delivered slotless from now on.
    pub fn on_slot_settled(&mut self, sn: u64, value: Option<Digest>) -> Vec<BbcaOutput> {
        let mut out = Vec::new();
        for id in self.own_pending_at(sn) {
            let inst = self.instances.get_mut(&id).expect("instance exists");
            if inst.own_block.as_ref().map(|b| b.digest()) == value {
                inst.settled = true;
            } else {
                self.reclaim(id, &mut out);
            }
        }
        out
    }

    /// No block can be delivered at `sn` any more: salvage own undelivered
    /// blocks aimed at it without the slot.
    pub fn reclaim_slot(&mut self, sn: u64) -> Vec<BbcaOutput> {
        let mut out = Vec::new();
        for id in self.own_pending_at(sn) {
            self.reclaim(id, &mut out);
        }
        out
    }

    fn own_pending_at(&self, sn: u64) -> Vec<InstanceId> {
        self.instances
            .range(InstanceId { sender: self.me, local_seq: 0 }..=InstanceId { sender: self.me, local_seq: u64::MAX })
            .filter(|(_, i)| i.own_sn == Some(sn) && !i.delivered && !i.reclaim)
            .map(|(id, _)| *id)
            .collect()
    }

    /// A slotted salvage that correct nodes refuse is reissued without the
    /// slot; an instance not salvaged yet will salvage slotless.
    fn reclaim(&mut self, id: InstanceId, out: &mut Vec<BbcaOutput>) {
        let inst = self.instances.get_mut(&id).expect("instance exists");
        let Some(block) = inst.own_block.clone() else { return };
        inst.reclaim = true;
        if !inst.salvaged {
            self.try_salvage(id, out);
            return;
        }
        if inst.salvaged_sn.is_some_and(|s| s.is_slotless()) {
            return;
        }
        let digest = block.digest();
        let yields = inst.yields.values().filter(|y| y.digest == digest).cloned().collect();
        inst.salvaged_sn = Some(SlotNumber::Slotless);
        out.push(BbcaOutput::VrbBcast { id, sn: SlotNumber::Slotless, block, yields });
    }

    /// The ready certificate this node holds for `sn`, if it sent READY.
    pub fn ready_cert_for(&self, sn: u64) -> Option<&ReadyCertificate> {
        self.ready_cert_per_sn.get(&sn)
    }
}

/// Whether 2f+1 adopt certificates for one slot are all empty, meaning no
/// block can ever be delivered at that slot.
pub fn verify_adopt_quorum_empty(
    params: &ProtocolParams,
    certs: &[(ValidatorId, ReadyCertificate)],
) -> Result<bool, ProtocolError> {
    let distinct: BTreeSet<ValidatorId> = certs.iter().map(|(v, _)| *v).collect();
    let need = quorum_2f1(params);
    if distinct.len() < need {
        return Err(ProtocolError::InsufficientQuorum { need, got: distinct.len() });
    }
    if certs.iter().any(|(_, c)| !c.is_well_formed(params)) {
        return Err(ProtocolError::MalformedCertificate);
    }
    Ok(certs.iter().all(|(_, c)| c.is_empty()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Command;
    use proptest::prelude::*;

    struct AlwaysValid;

    impl Predicate for AlwaysValid {
        fn check_initiate(&self, _: InstanceId, _: u64, _: &Block, _: Option<&TicketGrant>) -> Verdict {
            Verdict::Valid
        }
    }

    fn setup() -> (ProtocolParams, KeyRing) {
        (ProtocolParams::new(4, 1, 1000, 2).unwrap(), KeyRing::generate(4, 9))
    }

    fn node(keys: &KeyRing, me: u32) -> Bbca {
        let params = ProtocolParams::new(4, 1, 1000, 2).unwrap();
        Bbca::new(params, keys.clone(), keys.signer(ValidatorId(me)), &ProtocolOptions::default())
    }

    fn block(sender: u32, tag: u8) -> Arc<Block> {
        Arc::new(Block {
            sender: ValidatorId(sender),
            command: Command::None,
            predecessors: Vec::new(),
            payload: vec![tag],
        })
    }

    fn id(sender: u32, seq: u64) -> InstanceId {
        InstanceId { sender: ValidatorId(sender), local_seq: seq }
    }

    fn broadcasts(out: &[BbcaOutput]) -> Vec<&ProtocolMessage> {
        out.iter()
            .filter_map(|o| match o {
                BbcaOutput::Broadcast { msg } => Some(msg),
                _ => None,
            })
            .collect()
    }

    fn echo_sig(keys: &KeyRing, from: u32, id: InstanceId, sn: SlotNumber, d: &Digest) -> Signature {
        keys.signer(ValidatorId(from)).sign(&signed::echo(id, sn, d))
    }

    fn cert(keys: &KeyRing, id: InstanceId, sn: SlotNumber, d: Digest, by: &[u32]) -> ReadyCertificate {
        let entries = by
            .iter()
            .map(|v| EchoAttestation {
                validator: ValidatorId(*v),
                instance: id,
                sn,
                digest: d,
                sig: echo_sig(keys, *v, id, sn, &d),
            })
            .collect();
        ReadyCertificate { entries }
    }

    fn yield_from(
        keys: &KeyRing,
        from: u32,
        id: InstanceId,
        sn: SlotNumber,
        d: Digest,
        c: ReadyCertificate,
    ) -> SignedYield {
        let sig = keys.signer(ValidatorId(from)).sign(&signed::yield_msg(id, sn, &d, &c));
        SignedYield { from: ValidatorId(from), id, sn, digest: d, cert: c, sig }
    }

    fn feed_yield(b: &mut Bbca, y: SignedYield) -> Vec<BbcaOutput> {
        b.on_yield(y.from, y.id, y.sn, y.digest, y.cert, y.sig)
    }

    fn initiate(b: &mut Bbca, keys: &KeyRing, sender: u32, seq: u64, sn: u64, blk: Arc<Block>) -> Vec<BbcaOutput> {
        let iid = id(sender, seq);
        let sig = keys.signer(ValidatorId(sender)).sign(&signed::initiate(iid, SlotNumber::Slot(sn), &blk.digest()));
        b.on_initiate(ValidatorId(sender), iid, SlotNumber::Slot(sn), blk, None, &sig, &AlwaysValid)
    }

    #[test]
    fn echo_ready_deliver() {
        let (_, keys) = setup();
        let mut p1 = node(&keys, 1);
        let blk = block(0, 1);
        let d = blk.digest();
        let sn = SlotNumber::Slot(0);
        let out = initiate(&mut p1, &keys, 0, 0, 0, blk.clone());
        assert!(matches!(broadcasts(&out)[..], [ProtocolMessage::Echo { .. }]));

        let mut readied = false;
        for v in 0..3 {
            let out = p1.on_echo(ValidatorId(v), id(0, 0), sn, d, echo_sig(&keys, v, id(0, 0), sn, &d));
            readied |= broadcasts(&out).iter().any(|m| matches!(m, ProtocolMessage::Ready { .. }));
            assert_eq!(readied, v == 2, "READY exactly at the 2f+1-th echo");
        }
        assert_eq!(p1.ready_cert_for(0).map(|c| c.entries.len()), Some(3));

        let mut delivered = Vec::new();
        for v in 0..3 {
            let sig = keys.signer(ValidatorId(v)).sign(&signed::ready(id(0, 0), sn, &d));
            delivered.extend(p1.on_ready(ValidatorId(v), id(0, 0), sn, d, sig).into_iter().filter_map(|o| match o {
                BbcaOutput::DeliverCommit { sn, block, .. } => Some((sn, block.digest())),
                _ => None,
            }));
        }
        assert_eq!(delivered, vec![(sn, d)]);
    }

    #[test]
    fn forged_echo_ignored() {
        let (_, keys) = setup();
        let mut p1 = node(&keys, 1);
        let d = block(0, 1).digest();
        let sn = SlotNumber::Slot(0);
        // signed by p2 but claimed from p3
        let sig = echo_sig(&keys, 2, id(0, 0), sn, &d);
        for _ in 0..3 {
            assert!(p1.on_echo(ValidatorId(3), id(0, 0), sn, d, sig).is_empty());
        }
    }

    #[test]
    fn one_echo_per_slot() {
        let (_, keys) = setup();
        let mut p1 = node(&keys, 1);
        let first = initiate(&mut p1, &keys, 0, 0, 5, block(0, 1));
        let second = initiate(&mut p1, &keys, 2, 0, 5, block(2, 1));
        let other_slot = initiate(&mut p1, &keys, 2, 1, 6, block(2, 2));
        assert_eq!(broadcasts(&first).len(), 1);
        assert!(broadcasts(&second).is_empty());
        assert_eq!(broadcasts(&other_slot).len(), 1);
    }

    #[test]
    fn equivocating_initiate_ignored() {
        let (_, keys) = setup();
        let mut p1 = node(&keys, 1);
        initiate(&mut p1, &keys, 0, 0, 5, block(0, 1));
        assert!(broadcasts(&initiate(&mut p1, &keys, 0, 0, 6, block(0, 2))).is_empty());
    }

    #[test]
    fn finalize_adopts_empty_or_cert() {
        let (_, keys) = setup();
        let mut p1 = node(&keys, 1);
        let out = p1.on_finalize(7, None);
        assert!(matches!(out[0], BbcaOutput::DeliverAdopt { sn: 7, digest: None, .. }));
        assert!(p1.adopted_empty(7));
        assert!(p1.on_finalize(7, None).is_empty(), "finalize is idempotent");
        // no echo once the slot is finalized
        assert!(broadcasts(&initiate(&mut p1, &keys, 0, 0, 7, block(0, 1))).is_empty());

        let blk = block(2, 3);
        let d = blk.digest();
        let sn = SlotNumber::Slot(8);
        initiate(&mut p1, &keys, 2, 0, 8, blk);
        for v in 0..3 {
            p1.on_echo(ValidatorId(v), id(2, 0), sn, d, echo_sig(&keys, v, id(2, 0), sn, &d));
        }
        let out = p1.on_finalize(8, None);
        assert!(matches!(&out[0], BbcaOutput::DeliverAdopt { sn: 8, digest: Some(x), block: Some(_), .. } if *x == d));
        assert!(!p1.adopted_empty(8));
    }

    #[test]
    fn salvage_keeps_slot_only_with_certificate() {
        let (_, keys) = setup();
        for with_cert in [false, true] {
            let mut p0 = node(&keys, 0);
            let blk = block(0, 1);
            let d = blk.digest();
            let (iid, _) = p0.bcast(4, blk, None).unwrap();
            let sn = SlotNumber::Slot(4);
            let mut out = Vec::new();
            for v in 1..4 {
                let c =
                    if with_cert && v == 3 { cert(&keys, iid, sn, d, &[0, 1, 2]) } else { ReadyCertificate::empty() };
                out.extend(feed_yield(&mut p0, yield_from(&keys, v, iid, sn, d, c)));
            }
            let salvaged: Vec<SlotNumber> = out
                .iter()
                .filter_map(|o| match o {
                    BbcaOutput::VrbBcast { sn, yields, .. } => {
                        assert_eq!(yields.len(), 3);
                        Some(*sn)
                    }
                    _ => None,
                })
                .collect();
            let expect = if with_cert { sn } else { SlotNumber::Slotless };
            assert_eq!(salvaged, vec![expect]);
        }
    }

    #[test]
    fn bad_yield_certificate_rejected() {
        let (_, keys) = setup();
        let mut p0 = node(&keys, 0);
        let blk = block(0, 1);
        let d = blk.digest();
        let (iid, _) = p0.bcast(4, blk, None).unwrap();
        // certificate for a different slot than the yield claims
        let c = cert(&keys, iid, SlotNumber::Slot(5), d, &[0, 1, 2]);
        let y = yield_from(&keys, 1, iid, SlotNumber::Slot(4), d, c);
        assert!(!p0.yield_is_valid(&y));
        assert!(feed_yield(&mut p0, y).is_empty());
    }

    #[test]
    fn empty_adopt_quorum_reclaims_slotted_salvage() {
        let (_, keys) = setup();
        let mut p0 = node(&keys, 0);
        let blk = block(0, 1);
        let d = blk.digest();
        let (iid, _) = p0.bcast(4, blk, None).unwrap();
        let sn = SlotNumber::Slot(4);
        for v in 1..4 {
            let c = if v == 1 { cert(&keys, iid, sn, d, &[1, 2, 3]) } else { ReadyCertificate::empty() };
            feed_yield(&mut p0, yield_from(&keys, v, iid, sn, d, c));
        }
        let mut out = p0.on_finalize(4, None);
        for v in 1..3u32 {
            let c = ReadyCertificate::empty();
            let sig = keys.signer(ValidatorId(v)).sign(&signed::adopt_note(4, &c));
            out.extend(p0.on_adopt_note(ValidatorId(v), 4, c, sig));
        }
        assert_eq!(p0.adopt_tally(4), (3, 3));
        let reissued: Vec<SlotNumber> = out
            .iter()
            .filter_map(|o| match o {
                BbcaOutput::VrbBcast { sn, .. } => Some(*sn),
                _ => None,
            })
            .collect();
        assert_eq!(reissued, vec![SlotNumber::Slotless]);
    }

    #[test]
    fn finalized_own_instance_not_outstanding() {
        let (_, keys) = setup();
        let mut p0 = node(&keys, 0);
        p0.bcast(0, block(0, 1), None).unwrap();
        p0.bcast(1, block(0, 2), None).unwrap();
        assert_eq!(p0.outstanding_own(), 2);
        p0.on_finalize(0, None);
        assert_eq!(p0.outstanding_own(), 1);
        assert!(matches!(p0.bcast(0, block(0, 3), None), Err(ProtocolError::SlotAlreadyFinalized(0))));
    }

    #[test]
    fn adopt_quorum_check() {
        let (params, keys) = setup();
        let empty = |v: u32| (ValidatorId(v), ReadyCertificate::empty());
        assert!(matches!(
            verify_adopt_quorum_empty(&params, &[empty(0), empty(0), empty(1)]),
            Err(ProtocolError::InsufficientQuorum { need: 3, got: 2 })
        ));
        assert!(verify_adopt_quorum_empty(&params, &[empty(0), empty(1), empty(2)]).unwrap());
        let d = block(0, 1).digest();
        let c = cert(&keys, id(0, 0), SlotNumber::Slot(0), d, &[0, 1, 2]);
        assert!(verify_certificate(&keys, &params, &c));
        let with_cert = [empty(0), empty(1), (ValidatorId(2), c)];
        assert!(!verify_adopt_quorum_empty(&params, &with_cert).unwrap());
    }

    proptest! {
        /// Whatever INITIATEs arrive, a node echoes at most once per slot.
        #[test]
        fn at_most_one_echo_per_slot(inits in prop::collection::vec((0u32..4, 0u64..6, any::<u8>()), 1..40)) {
            let (_, keys) = setup();
            let mut p1 = node(&keys, 1);
            let mut seq = [0u64; 4];
            let mut echoed: BTreeMap<u64, usize> = BTreeMap::new();
            for (sender, sn, tag) in inits {
                let s = seq[sender as usize];
                seq[sender as usize] += 1;
                let out = initiate(&mut p1, &keys, sender, s, sn, block(sender, tag));
                for m in broadcasts(&out) {
                    if let ProtocolMessage::Echo { sn, .. } = m {
                        *echoed.entry(sn.as_slot().unwrap()).or_default() += 1;
                    }
                }
            }
            prop_assert!(echoed.values().all(|c| *c == 1));
        }
    }
}
