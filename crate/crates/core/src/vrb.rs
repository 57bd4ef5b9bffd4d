//! Validated reliable broadcast used to salvage stuck broadcast instances.
//!
//! Classic echo/ready flow with f+1 ready amplification. A SEND is echoed
//! only if its yield set justifies the slot number it carries. Instances are
//! keyed by `(instance, slot number)`: a sender whose slotted salvage lost its
//! slot to the fallback may reclaim the block slotless under a fresh key. A
//! node sends READY for only one key per instance, so at most one delivers.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use crate::bbca::{verify_yield, Verdict};
use crate::crypto::{KeyRing, Signature, Signer};
use crate::encoding::signed;
use crate::options::{Mutant, ProtocolOptions};
use crate::types::{
    quorum_2f1, quorum_f1, Block, Digest, InstanceId, ProtocolMessage, ProtocolParams, ReadyCertificate, SlotNumber,
    ValidatorId, VrbPayload,
};

/// Structural block checks applied before echoing a salvage payload. Ticket
/// validity is not re-checked: the yields already prove the slot story.
pub trait BlockCheck {
    fn check_block(&self, id: InstanceId, block: &Block) -> Verdict;
    /// Whether a slotted salvage of `digest` at `sn` may be echoed. A node
    /// that finalized `sn` without a certificate must not help it deliver
    /// while an all-empty adopt quorum is possible.
    fn may_echo_slotted(&self, sn: u64, digest: &Digest) -> bool;
    /// Whether a block certified for `sn` may be salvaged slotless instead:
    /// Valid once the slot went to something else or an empty adopt quorum
    /// is visible.
    fn may_reclaim(&self, sn: u64, digest: &Digest) -> Verdict;
}

#[derive(Clone, Debug, PartialEq)]
pub enum VrbOutput {
    Broadcast { msg: ProtocolMessage },
    Deliver { id: InstanceId, sn: SlotNumber, block: Arc<Block> },
}

#[derive(Default)]
struct VrbInstance {
    payload: Option<VrbPayload>,
    sent_echo: bool,
    sent_ready: bool,
    delivered: bool,
    parked: bool,
    echoes: BTreeMap<ValidatorId, Digest>,
    readys: BTreeMap<ValidatorId, Digest>,
    /// Delivery decided but block body still missing.
    awaiting: Option<Digest>,
}

pub struct Vrb {
    params: ProtocolParams,
    keys: KeyRing,
    signer: Signer,
    check_q: bool,
    instances: BTreeMap<Key, VrbInstance>,
    blocks: HashMap<Digest, Arc<Block>>,
    parked: VecDeque<Key>,
    /// The one slot number per instance this node sent READY for. Two
    /// deliveries of one instance would need intersecting READY quorums.
    readied: HashMap<InstanceId, SlotNumber>,
}

type Key = (InstanceId, SlotNumber);

/// The slot a payload's yields certify, if any. A slotless payload carrying
/// one is a reclaim.
fn certified_slot(payload: &VrbPayload) -> Option<SlotNumber> {
    payload.yields.iter().find(|y| !y.cert.is_empty()).map(|y| y.sn)
}

/// The salvage validity predicate over a payload's yield set.
pub fn payload_is_valid(keys: &KeyRing, params: &ProtocolParams, payload: &VrbPayload) -> bool {
    let digest = payload.block.digest();
    let mut senders = BTreeSet::new();
    for y in &payload.yields {
        if y.id != payload.id || y.digest != digest || !senders.insert(y.from) {
            return false;
        }
        if !verify_yield(keys, params, y) {
            return false;
        }
    }
    if senders.len() < quorum_2f1(params) {
        return false;
    }
    match payload.sn {
        SlotNumber::Slot(_) => payload.yields.iter().any(|y| !y.cert.is_empty() && y.sn == payload.sn),
        // all empty, or a reclaim whose certificates agree on one slot
        SlotNumber::Slotless => {
            let certified = certified_slot(payload);
            payload.yields.iter().all(|y| y.cert.is_empty() || Some(y.sn) == certified)
        }
    }
}

impl Vrb {
    pub fn new(params: ProtocolParams, keys: KeyRing, signer: Signer, opts: &ProtocolOptions) -> Self {
        Vrb {
            params,
            keys,
            signer,
            check_q: opts.mutant != Mutant::NoValidityGate,
            instances: BTreeMap::new(),
            blocks: HashMap::new(),
            parked: VecDeque::new(),
            readied: HashMap::new(),
        }
    }

    pub fn bcast(&mut self, payload: VrbPayload) -> Vec<VrbOutput> {
        let digest = payload.block.digest();
        let sig = self.signer.sign(&signed::vrb_send(payload.id, payload.sn, &digest));
        vec![VrbOutput::Broadcast { msg: ProtocolMessage::VrbSend { payload, sig } }]
    }

    pub fn block(&self, digest: &Digest) -> Option<&Arc<Block>> {
        self.blocks.get(digest)
    }

    /// The certificate of a slotted salvage for `sn` this node echoed.
    pub fn echoed_cert(&self, sn: u64) -> Option<ReadyCertificate> {
        self.instances
            .iter()
            .filter(|((_, s), i)| *s == SlotNumber::Slot(sn) && i.sent_echo)
            .find_map(|(_, i)| {
                i.payload.as_ref()?.yields.iter().find(|y| !y.cert.is_empty() && y.sn == SlotNumber::Slot(sn))
            })
            .map(|y| y.cert.clone())
    }

    pub fn on_send(
        &mut self,
        from: ValidatorId,
        payload: VrbPayload,
        sig: Signature,
        check: &dyn BlockCheck,
    ) -> Vec<VrbOutput> {
        let mut out = Vec::new();
        let digest = payload.block.digest();
        if payload.id.sender != from
            || payload.block.sender != from
            || sig.signer != from
            || !self.keys.verify(&sig, &signed::vrb_send(payload.id, payload.sn, &digest))
        {
            return out;
        }
        if self.check_q && !payload_is_valid(&self.keys, &self.params, &payload) {
            return out;
        }
        let key = (payload.id, payload.sn);
        self.blocks.entry(digest).or_insert_with(|| payload.block.clone());
        let inst = self.instances.entry(key).or_default();
        if inst.payload.is_some() {
            return out;
        }
        inst.payload = Some(payload);
        self.try_echo(key, check, &mut out);
        self.finish_awaiting(key, &mut out);
        out
    }

    fn try_echo(&mut self, key: Key, check: &dyn BlockCheck, out: &mut Vec<VrbOutput>) {
        let Some(inst) = self.instances.get_mut(&key) else { return };
        let Some(payload) = inst.payload.as_ref() else { return };
        if inst.sent_echo {
            return;
        }
        let id = key.0;
        let slot_verdict = match (payload.sn, certified_slot(payload)) {
            (SlotNumber::Slot(s), _) if self.check_q && !check.may_echo_slotted(s, &payload.block.digest()) => {
                Verdict::Pending
            }
            (SlotNumber::Slotless, Some(SlotNumber::Slot(s))) if self.check_q => {
                check.may_reclaim(s, &payload.block.digest())
            }
            _ => Verdict::Valid,
        };
        let verdict = match (slot_verdict, check.check_block(id, &payload.block)) {
            (Verdict::Invalid, _) | (_, Verdict::Invalid) => Verdict::Invalid,
            (Verdict::Pending, _) | (_, Verdict::Pending) => Verdict::Pending,
            _ => Verdict::Valid,
        };
        match verdict {
            Verdict::Invalid => {}
            Verdict::Pending => {
                if !inst.parked {
                    inst.parked = true;
                    self.parked.push_back(key);
                }
            }
            Verdict::Valid => {
                inst.sent_echo = true;
                inst.parked = false;
                let (sn, digest) = (payload.sn, payload.block.digest());
                let sig = self.signer.sign(&signed::vrb_echo(id, sn, &digest));
                out.push(VrbOutput::Broadcast { msg: ProtocolMessage::VrbEcho { id, sn, digest, sig } });
            }
        }
    }

    pub fn retry_parked(&mut self, check: &dyn BlockCheck) -> Vec<VrbOutput> {
        let mut out = Vec::new();
        let queue: Vec<Key> = self.parked.drain(..).collect();
        for key in &queue {
            if let Some(i) = self.instances.get_mut(key) {
                i.parked = false;
            }
        }
        for key in queue {
            self.try_echo(key, check, &mut out);
        }
        out
    }

    pub fn on_echo(
        &mut self,
        from: ValidatorId,
        id: InstanceId,
        sn: SlotNumber,
        digest: Digest,
        sig: Signature,
    ) -> Vec<VrbOutput> {
        let mut out = Vec::new();
        if sig.signer != from || !self.keys.verify(&sig, &signed::vrb_echo(id, sn, &digest)) {
            return out;
        }
        let inst = self.instances.entry((id, sn)).or_default();
        if inst.echoes.insert(from, digest).is_some() {
            return out;
        }
        let matching = inst.echoes.values().filter(|d| **d == digest).count();
        if matching >= quorum_2f1(&self.params) {
            self.send_ready(id, sn, digest, &mut out);
        }
        out
    }

    fn send_ready(&mut self, id: InstanceId, sn: SlotNumber, digest: Digest, out: &mut Vec<VrbOutput>) {
        if self.readied.get(&id).is_some_and(|s| *s != sn) {
            return;
        }
        let inst = self.instances.get_mut(&(id, sn)).expect("instance exists");
        if inst.sent_ready {
            return;
        }
        inst.sent_ready = true;
        self.readied.insert(id, sn);
        let sig = self.signer.sign(&signed::vrb_ready(id, sn, &digest));
        out.push(VrbOutput::Broadcast { msg: ProtocolMessage::VrbReady { id, sn, digest, sig } });
    }

    pub fn on_ready(
        &mut self,
        from: ValidatorId,
        id: InstanceId,
        sn: SlotNumber,
        digest: Digest,
        sig: Signature,
    ) -> Vec<VrbOutput> {
        let mut out = Vec::new();
        if sig.signer != from || !self.keys.verify(&sig, &signed::vrb_ready(id, sn, &digest)) {
            return out;
        }
        let key = (id, sn);
        let inst = self.instances.entry(key).or_default();
        if inst.readys.insert(from, digest).is_some() {
            return out;
        }
        let matching = inst.readys.values().filter(|d| **d == digest).count();
        if matching >= quorum_f1(&self.params) {
            self.send_ready(id, sn, digest, &mut out);
        }
        let inst = self.instances.get_mut(&key).expect("instance exists");
        if matching >= quorum_2f1(&self.params) && !inst.delivered && inst.awaiting.is_none() {
            inst.awaiting = Some(digest);
            self.finish_awaiting(key, &mut out);
            let inst = &self.instances[&key];
            if !inst.delivered {
                out.push(VrbOutput::Broadcast { msg: ProtocolMessage::Pull { id, digest } });
            }
        }
        out
    }

    fn finish_awaiting(&mut self, key: Key, out: &mut Vec<VrbOutput>) {
        let inst = self.instances.get_mut(&key).expect("instance exists");
        let Some(digest) = inst.awaiting else { return };
        if inst.delivered {
            return;
        }
        if let Some(block) = self.blocks.get(&digest) {
            inst.delivered = true;
            out.push(VrbOutput::Deliver { id: key.0, sn: key.1, block: block.clone() });
        }
    }

    pub fn on_block(&mut self, block: Arc<Block>) -> Vec<VrbOutput> {
        let mut out = Vec::new();
        let digest = block.digest();
        self.blocks.entry(digest).or_insert(block);
        let waiting: Vec<Key> = self
            .instances
            .iter()
            .filter(|(_, i)| !i.delivered && i.awaiting == Some(digest))
            .map(|(key, _)| *key)
            .collect();
        for key in waiting {
            self.finish_awaiting(key, &mut out);
        }
        out
    }
}
