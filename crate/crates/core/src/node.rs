//! One validator: broadcast, salvage, ledger, fallback consensus and slot
//! allocation wired together behind a single event handler.
//!
//! Every input is processed to quiescence; the result is an ordered list of
//! effects (messages, timers, observable events) for the driver to apply.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bbca::{Bbca, BbcaOutput, Predicate, Verdict};
use crate::crypto::{KeyRing, Signature, Signer};
use crate::fallback::{leader, Duty, Fallback, FallbackOutput, Materialized};
use crate::ledger::{Ledger, LedgerOutput, LogEntry};
use crate::options::ProtocolOptions;
use crate::ticket::{TicketOutput, TicketPolicy, Tickets};
use crate::types::{
    quorum_2f1, Block, BlockRef, Command, ControlCommand, Digest, InstanceId, ProtocolMessage, ProtocolParams,
    ReadyCertificate, SlotNumber, TicketGrant, ValidatorId, VrbPayload,
};
use crate::vrb::{BlockCheck, Vrb, VrbOutput};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "timer", rename_all = "snake_case")]
pub enum TimerKind {
    Instance { id: InstanceId },
    Commit { slot: u64 },
    Causal { slot: u64 },
    View { slot: u64, view: u64 },
    TicketRetry { epoch: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodeInput {
    Message {
        from: ValidatorId,
        msg: ProtocolMessage,
    },
    Timer(TimerKind),
    /// Application payload to include in a future block.
    Submit(Vec<u8>),
    /// Membership command to include in a future block.
    Control(ControlCommand),
    /// Decision delivered by the instant consensus double.
    Decision {
        slot: u64,
        value: Option<Digest>,
    },
}

/// Observable protocol events, recorded in traces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeEvent {
    BbcaDeliverCommit { id: InstanceId, sn: SlotNumber, digest: Digest, block: Arc<Block> },
    BbcaAdopt { sn: u64, digest: Option<Digest>, cert: ReadyCertificate },
    Final { digest: Digest, sn: SlotNumber },
    Commit { digest: Digest, slot: u64, own_slot: SlotNumber, sender: ValidatorId },
    SlotCommit { slot: u64, digest: Option<Digest>, already_committed: bool },
    VbcParticipate { slot: u64, value: Option<Digest>, certs: Vec<(ValidatorId, ReadyCertificate)> },
    VbcDecide { slot: u64, value: Option<Digest> },
    TicketGrant { validator: ValidatorId, slot: u64, certifier: Option<ValidatorId>, snapshot: u64 },
    Conflict { slot: u64, existing: LogEntry, incoming: LogEntry },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Effect {
    Send { to: ValidatorId, msg: ProtocolMessage },
    Broadcast { msg: ProtocolMessage },
    SetTimer { timer: TimerKind, after: u64 },
    CancelTimer { timer: TimerKind },
    Event(NodeEvent),
}

enum Internal {
    Bbca(BbcaOutput),
    Vrb(VrbOutput),
    Ledger(LedgerOutput),
    Fallback(FallbackOutput),
    Ticket(TicketOutput),
}

/// Per-node fault switches that live inside the protocol stack.
#[derive(Clone, Copy, Debug, Default)]
pub struct NodeFaults {
    pub stall_leader: bool,
}

/// Command for a new block, the consensus blocks it must reference, and the
/// slot whose consensus it carries.
type Picked = (Command, Vec<BlockRef>, Option<u64>);

pub struct Node {
    me: ValidatorId,
    params: ProtocolParams,
    signer: Signer,
    lookahead: u64,
    bbca: Bbca,
    vrb: Vrb,
    ledger: Ledger,
    fallback: Fallback,
    tickets: Tickets,
    workload: VecDeque<Vec<u8>>,
    finalize_duties: VecDeque<Command>,
    consensus_duties: VecDeque<Duty>,
    control_duties: VecDeque<ControlCommand>,
    inflight_consensus: BTreeMap<u64, BTreeSet<InstanceId>>,
    pull_answered: HashSet<(Digest, ValidatorId)>,
}

/// The external validity predicate, evaluated against this node's state.
struct Validity<'a> {
    ledger: &'a Ledger,
    tickets: &'a Tickets,
    fallback: &'a Fallback,
    params: &'a ProtocolParams,
}

/// Validity of salvage payloads: block structure plus this node's view of
/// the slot the salvage is about.
struct SalvageCheck<'a> {
    validity: Validity<'a>,
    bbca: &'a Bbca,
}

impl Validity<'_> {
    fn structural(&self, id: InstanceId, block: &Block, sn: Option<u64>) -> Verdict {
        if block.sender != id.sender || !block.has_unique_predecessors() {
            return Verdict::Invalid;
        }
        let cmd_ok = match &block.command {
            Command::None => true,
            Command::Finalize { slot, adopted, cert } => self.fallback.finalize_is_valid(*slot, adopted, cert),
            Command::Proposal { view, .. } => block.sender == leader(self.params, *view),
            Command::Vote { .. } | Command::Complaint { .. } => true,
            Command::Control(ControlCommand::Readd { validator }) => self.params.contains(*validator),
            Command::Control(ControlCommand::Allocate { .. }) => {
                matches!(self.tickets.policy(), TicketPolicy::Hybrid { .. })
            }
        };
        if !cmd_ok {
            return Verdict::Invalid;
        }
        if let Some(s) = sn {
            if self.ledger.entry(s).is_some() {
                return Verdict::Invalid;
            }
        }
        // message numbering: a sender's k-th block needs its (k-1)-th first,
        // except a FINALIZE for a slot this node finalized too, which may be
        // the very slot the (k-1)-th block is stuck at
        let finalize_exempt = matches!(block.command, Command::Finalize { slot, .. } if self.ledger.finalize_invoked(slot) || self.ledger.entry(slot).is_some());
        if id.local_seq > 0
            && !finalize_exempt
            && !self.ledger.instance_delivered(InstanceId { sender: id.sender, local_seq: id.local_seq - 1 })
        {
            return Verdict::Pending;
        }
        if let Command::Proposal { view, slot, .. } = &block.command {
            if self.fallback.proposal_digest(*slot, *view).is_some_and(|d| d != block.digest()) {
                return Verdict::Invalid;
            }
        }
        let mut pending = false;
        for r in &block.predecessors {
            if !self.ledger.is_finalized(&r.digest) {
                pending = true;
                continue;
            }
            // slotted blocks may only reference strictly lower slots,
            // directly or through slotless ancestors
            if let (Some(s), Some(h)) = (sn, self.ledger.horizon(&r.digest)) {
                if h >= s {
                    return Verdict::Invalid;
                }
            }
        }
        if pending {
            Verdict::Pending
        } else {
            Verdict::Valid
        }
    }
}

impl Predicate for Validity<'_> {
    fn check_initiate(&self, id: InstanceId, sn: u64, block: &Block, ticket: Option<&TicketGrant>) -> Verdict {
        match self.tickets.validate(id.sender, sn, ticket, self.ledger.first_uncommitted()) {
            Verdict::Valid => self.structural(id, block, Some(sn)),
            other => other,
        }
    }
}

impl BlockCheck for SalvageCheck<'_> {
    fn check_block(&self, id: InstanceId, block: &Block) -> Verdict {
        self.validity.structural(id, block, None)
    }

    /// After an empty adopt, only once the slot is decided for this block or
    /// the adopt notes seen so far leave no room for an empty quorum (more
    /// than n-2f-1 senders adopted a certificate, so one of them is correct).
    fn may_echo_slotted(&self, sn: u64, digest: &Digest) -> bool {
        if !self.bbca.adopted_empty(sn) || self.validity.ledger.entry(sn) == Some(LogEntry::Block(*digest)) {
            return true;
        }
        let params = self.validity.params;
        let (empty, seen) = self.bbca.adopt_tally(sn);
        empty + (params.n() - seen) < quorum_2f1(params)
    }

    fn may_reclaim(&self, sn: u64, digest: &Digest) -> Verdict {
        if self.bbca.adopt_tally(sn).0 >= quorum_2f1(self.validity.params) {
            return Verdict::Valid;
        }
        match self.validity.ledger.entry(sn) {
            Some(LogEntry::Block(d)) if d != *digest => Verdict::Valid,
            Some(LogEntry::Hole) => Verdict::Valid,
            _ => Verdict::Pending,
        }
    }
}

macro_rules! validity {
    ($s:expr) => {
        Validity { ledger: &$s.ledger, tickets: &$s.tickets, fallback: &$s.fallback, params: &$s.params }
    };
}

macro_rules! salvage_check {
    ($s:expr) => {
        SalvageCheck { validity: validity!($s), bbca: &$s.bbca }
    };
}

impl Node {
    pub fn new(
        params: ProtocolParams,
        keys: KeyRing,
        signer: Signer,
        opts: &ProtocolOptions,
        policy: TicketPolicy,
        overrides: BTreeMap<u64, Vec<ValidatorId>>,
        faults: NodeFaults,
    ) -> Self {
        let me = signer.id();
        let lookahead = opts.lookahead_for(params.n());
        Node {
            me,
            params,
            signer: signer.clone(),
            lookahead,
            bbca: Bbca::new(params, keys.clone(), signer.clone(), opts),
            vrb: Vrb::new(params, keys.clone(), signer.clone(), opts),
            ledger: Ledger::new(params.delta()),
            fallback: Fallback::new(me, params, keys.clone(), opts.mutant, opts.oracle_consensus, faults.stall_leader),
            tickets: Tickets::new(params, keys, signer, policy, lookahead, opts.removal_threshold, overrides),
            workload: VecDeque::new(),
            finalize_duties: VecDeque::new(),
            consensus_duties: VecDeque::new(),
            control_duties: VecDeque::new(),
            inflight_consensus: BTreeMap::new(),
            pull_answered: HashSet::new(),
        }
    }

    pub fn id(&self) -> ValidatorId {
        self.me
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn tickets(&self) -> &Tickets {
        &self.tickets
    }

    pub fn fallback(&self) -> &Fallback {
        &self.fallback
    }

    pub fn bbca_mut(&mut self) -> &mut Bbca {
        &mut self.bbca
    }

    pub fn sign(&self, bytes: &[u8]) -> Signature {
        self.signer.sign(bytes)
    }

    pub fn pending_workload(&self) -> usize {
        self.workload.len()
    }

    /// Effects to apply when the node boots.
    pub fn start(&mut self) -> Vec<Effect> {
        let mut fx = Vec::new();
        let mut q: VecDeque<Internal> = self.tickets.start().into_iter().map(Internal::Ticket).collect();
        self.drain(&mut q, &mut fx);
        self.maybe_propose(&mut fx);
        fx
    }

    pub fn handle(&mut self, input: NodeInput) -> Vec<Effect> {
        let mut fx = Vec::new();
        let mut q = VecDeque::new();
        match input {
            NodeInput::Message { from, msg } => self.on_message(from, msg, &mut q, &mut fx),
            NodeInput::Timer(t) => self.on_timer(t, &mut q),
            NodeInput::Submit(payload) => self.workload.push_back(payload),
            NodeInput::Control(c) => self.control_duties.push_back(c),
            NodeInput::Decision { slot, value } => {
                if self.fallback.decided(slot).is_none() {
                    self.fallback.note_decision(slot, value);
                    q.push_back(Internal::Fallback(FallbackOutput::Decide { slot, value, instance: None }));
                }
            }
        }
        self.drain(&mut q, &mut fx);
        self.settle(&mut fx);
        self.maybe_propose(&mut fx);
        fx
    }

    fn on_message(
        &mut self,
        from: ValidatorId,
        msg: ProtocolMessage,
        q: &mut VecDeque<Internal>,
        fx: &mut Vec<Effect>,
    ) {
        match msg {
            ProtocolMessage::Initiate { id, sn, block, ticket, sig } => {
                if let SlotNumber::Slot(s) = sn {
                    let fu = self.ledger.first_uncommitted();
                    if id.sender == from && self.tickets.validate(from, s, ticket.as_ref(), fu) == Verdict::Valid {
                        q.extend(self.ledger.note_slot_seen(s).into_iter().map(Internal::Ledger));
                        q.extend(self.ledger.watch_predecessors(&block).into_iter().map(Internal::Ledger));
                    }
                }
                let v = validity!(self);
                let out = self.bbca.on_initiate(from, id, sn, block, ticket, &sig, &v);
                q.extend(out.into_iter().map(Internal::Bbca));
            }
            ProtocolMessage::Echo { id, sn, digest, sig } => {
                q.extend(self.bbca.on_echo(from, id, sn, digest, sig).into_iter().map(Internal::Bbca));
            }
            ProtocolMessage::Ready { id, sn, digest, sig } => {
                q.extend(self.bbca.on_ready(from, id, sn, digest, sig).into_iter().map(Internal::Bbca));
            }
            ProtocolMessage::Yield { id, sn, digest, cert, sig } => {
                q.extend(self.bbca.on_yield(from, id, sn, digest, cert, sig).into_iter().map(Internal::Bbca));
            }
            ProtocolMessage::Checkpoint { id, sn, digest, sig } => {
                q.extend(self.bbca.on_checkpoint(from, id, sn, digest, sig).into_iter().map(Internal::Bbca));
            }
            ProtocolMessage::Pull { id, digest } => {
                let block = self
                    .bbca
                    .block(&digest)
                    .or_else(|| self.vrb.block(&digest))
                    .or_else(|| self.ledger.block(&digest))
                    .cloned();
                if let Some(block) = block {
                    if self.pull_answered.insert((digest, from)) {
                        fx.push(Effect::Send { to: from, msg: ProtocolMessage::BlockReply { id, block } });
                    }
                }
            }
            ProtocolMessage::BlockReply { block, .. } => {
                q.extend(self.bbca.on_block(block.clone()).into_iter().map(Internal::Bbca));
                q.extend(self.vrb.on_block(block.clone()).into_iter().map(Internal::Vrb));
                q.extend(self.ledger.on_block(block).into_iter().map(Internal::Ledger));
            }
            ProtocolMessage::VrbSend { payload, sig } => {
                let v = salvage_check!(self);
                q.extend(self.vrb.on_send(from, payload, sig, &v).into_iter().map(Internal::Vrb));
            }
            ProtocolMessage::VrbEcho { id, sn, digest, sig } => {
                q.extend(self.vrb.on_echo(from, id, sn, digest, sig).into_iter().map(Internal::Vrb));
            }
            ProtocolMessage::AdoptNote { sn, cert, sig } => {
                q.extend(self.bbca.on_adopt_note(from, sn, cert, sig).into_iter().map(Internal::Bbca));
            }
            ProtocolMessage::VrbReady { id, sn, digest, sig } => {
                q.extend(self.vrb.on_ready(from, id, sn, digest, sig).into_iter().map(Internal::Vrb));
            }
            ProtocolMessage::TicketRequest { validator, epoch } => {
                if validator == from {
                    q.extend(self.tickets.on_request(from, epoch).into_iter().map(Internal::Ticket));
                }
            }
            ProtocolMessage::TicketGrant { grant } => {
                if grant.certifier == from {
                    self.tickets.on_grant(grant);
                }
            }
        }
    }

    fn on_timer(&mut self, t: TimerKind, q: &mut VecDeque<Internal>) {
        match t {
            TimerKind::Instance { id } => {
                q.extend(self.bbca.on_instance_timeout(id).into_iter().map(Internal::Bbca));
            }
            TimerKind::Commit { slot } => {
                q.extend(self.ledger.on_commit_timeout(slot).into_iter().map(Internal::Ledger));
            }
            TimerKind::Causal { slot } => {
                q.extend(self.ledger.on_causal_timeout(slot).into_iter().map(Internal::Ledger));
            }
            TimerKind::View { slot, view } => {
                q.extend(self.fallback.on_view_timeout(slot, view).into_iter().map(Internal::Fallback));
            }
            TimerKind::TicketRetry { epoch } => self.tickets.on_request_timeout(epoch),
        }
    }
}

impl Node {
    fn drain(&mut self, q: &mut VecDeque<Internal>, fx: &mut Vec<Effect>) {
        while let Some(item) = q.pop_front() {
            match item {
                Internal::Bbca(o) => self.route_bbca(o, q, fx),
                Internal::Vrb(VrbOutput::Broadcast { msg }) => fx.push(Effect::Broadcast { msg }),
                Internal::Vrb(VrbOutput::Deliver { id, sn, block }) => {
                    q.extend(self.bbca.on_vrb_deliver(id, sn, block).into_iter().map(Internal::Bbca));
                }
                Internal::Ledger(o) => self.route_ledger(o, q, fx),
                Internal::Fallback(o) => self.route_fallback(o, q, fx),
                Internal::Ticket(TicketOutput::Request { to, epoch }) => {
                    fx.push(Effect::Send { to, msg: ProtocolMessage::TicketRequest { validator: self.me, epoch } });
                }
                Internal::Ticket(TicketOutput::Grant { to, grant }) => {
                    fx.push(Effect::Event(NodeEvent::TicketGrant {
                        validator: grant.validator,
                        slot: grant.slot,
                        certifier: Some(grant.certifier),
                        snapshot: 0,
                    }));
                    fx.push(Effect::Send { to, msg: ProtocolMessage::TicketGrant { grant } });
                }
            }
        }
    }

    fn route_bbca(&mut self, o: BbcaOutput, q: &mut VecDeque<Internal>, fx: &mut Vec<Effect>) {
        match o {
            BbcaOutput::DeliverCommit { id, sn, block } => {
                if id.sender == self.me {
                    for ids in self.inflight_consensus.values_mut() {
                        ids.remove(&id);
                    }
                    self.inflight_consensus.retain(|_, ids| !ids.is_empty());
                }
                let digest = block.digest();
                fx.push(Effect::Event(NodeEvent::BbcaDeliverCommit { id, sn, digest, block: block.clone() }));
                q.extend(self.ledger.on_deliver_commit(id, sn, block).into_iter().map(Internal::Ledger));
            }
            BbcaOutput::DeliverAdopt { sn, digest, block: _, cert } => {
                fx.push(Effect::Event(NodeEvent::BbcaAdopt { sn, digest, cert: cert.clone() }));
                self.finalize_duties.push_back(Command::Finalize { slot: sn, adopted: digest, cert });
            }
            BbcaOutput::Send { to, msg } => fx.push(Effect::Send { to, msg }),
            BbcaOutput::Broadcast { msg } => fx.push(Effect::Broadcast { msg }),
            BbcaOutput::SetTimer { id, after } => {
                fx.push(Effect::SetTimer { timer: TimerKind::Instance { id }, after })
            }
            BbcaOutput::CancelTimer { id } => fx.push(Effect::CancelTimer { timer: TimerKind::Instance { id } }),
            BbcaOutput::VrbBcast { id, sn, block, yields } => {
                let payload = VrbPayload { id, sn, block, yields };
                q.extend(self.vrb.bcast(payload).into_iter().map(Internal::Vrb));
            }
        }
    }

    fn route_ledger(&mut self, o: LedgerOutput, q: &mut VecDeque<Internal>, fx: &mut Vec<Effect>) {
        match o {
            LedgerOutput::Final { block, digest, sn } => {
                fx.push(Effect::Event(NodeEvent::Final { digest, sn }));
                q.extend(self.fallback.on_block(block).into_iter().map(Internal::Fallback));
            }
            LedgerOutput::Commit { block, digest, slot, own_slot } => {
                fx.push(Effect::Event(NodeEvent::Commit { digest, slot, own_slot, sender: block.sender }));
            }
            LedgerOutput::SlotCommitted { slot, entry, already, block } => {
                fx.push(Effect::Event(NodeEvent::SlotCommit { slot, digest: entry, already_committed: already }));
                q.extend(self.tickets.on_commit(slot, block.as_deref()).into_iter().map(Internal::Ticket));
            }
            LedgerOutput::FinalizeSlot(s) => {
                let salvage = self.vrb.echoed_cert(s);
                q.extend(self.bbca.on_finalize(s, salvage).into_iter().map(Internal::Bbca));
            }
            LedgerOutput::SetCommitTimer { slot, after } => {
                fx.push(Effect::SetTimer { timer: TimerKind::Commit { slot }, after });
            }
            // stale commit timers are ignored by the ledger when they fire
            LedgerOutput::CancelCommitTimer => {}
            LedgerOutput::SetCausalTimer { slot, after } => {
                fx.push(Effect::SetTimer { timer: TimerKind::Causal { slot }, after });
            }
            LedgerOutput::Pull { id, digest } => {
                let id = id.unwrap_or(InstanceId { sender: self.me, local_seq: u64::MAX });
                fx.push(Effect::Broadcast { msg: ProtocolMessage::Pull { id, digest } });
            }
            LedgerOutput::Conflict { slot, existing, incoming } => {
                fx.push(Effect::Event(NodeEvent::Conflict { slot, existing, incoming }));
            }
        }
    }

    fn route_fallback(&mut self, o: FallbackOutput, q: &mut VecDeque<Internal>, fx: &mut Vec<Effect>) {
        match o {
            FallbackOutput::Participate { slot, value, certs } => {
                fx.push(Effect::Event(NodeEvent::VbcParticipate { slot, value, certs }));
            }
            FallbackOutput::Decide { slot, value, instance } => {
                fx.push(Effect::Event(NodeEvent::VbcDecide { slot, value }));
                q.extend(self.bbca.on_slot_settled(slot, value).into_iter().map(Internal::Bbca));
                let block = value.and_then(|d| {
                    self.bbca.block(&d).or_else(|| self.vrb.block(&d)).or_else(|| self.ledger.block(&d)).cloned()
                });
                q.extend(self.ledger.on_vbc_decide(slot, value, block, instance).into_iter().map(Internal::Ledger));
            }
            FallbackOutput::SetViewTimer { slot, view, after } => {
                fx.push(Effect::SetTimer { timer: TimerKind::View { slot, view }, after });
            }
            FallbackOutput::Duty(d) => self.consensus_duties.push_back(d),
        }
    }

    fn progress_mark(&self) -> (usize, usize, u64) {
        (self.ledger.finalized_count(), self.ledger.committed_count(), self.ledger.first_uncommitted())
    }

    /// Re-evaluates parked INITIATEs and salvage payloads until the ledger
    /// stops changing.
    fn settle(&mut self, fx: &mut Vec<Effect>) {
        loop {
            let before = self.progress_mark();
            let mut q = VecDeque::new();
            {
                let v = validity!(self);
                q.extend(self.bbca.retry_parked(&v).into_iter().map(Internal::Bbca));
                let v = salvage_check!(self);
                q.extend(self.vrb.retry_parked(&v).into_iter().map(Internal::Vrb));
            }
            if q.is_empty() {
                return;
            }
            self.drain(&mut q, fx);
            if self.progress_mark() == before {
                return;
            }
        }
    }
}

impl Node {
    fn has_duties(&self) -> bool {
        !self.finalize_duties.is_empty() || !self.consensus_duties.is_empty() || !self.control_duties.is_empty()
    }

    fn free_ticket(&self, from: u64, until: u64) -> Option<(u64, Option<TicketGrant>)> {
        let (bbca, ledger) = (&self.bbca, &self.ledger);
        self.tickets.next_ticket(from, until, |s| bbca.is_slot_finalized(s) || ledger.entry(s).is_some())
    }

    /// Broadcasts new blocks while the pacing limit allows and there is a
    /// reason to. Blocks without a duty stay in the lower half of the
    /// lookahead window and duties in the full window, except duties for the
    /// first uncommitted slot, which may go anywhere: a stalled slot must
    /// never run out of room for its consensus.
    fn maybe_propose(&mut self, fx: &mut Vec<Effect>) {
        let k = self.params.k_outstanding();
        while self.bbca.outstanding_own() < k {
            let fu = self.ledger.first_uncommitted();
            let work = !self.workload.is_empty() || self.ledger.frontier_has_slotless();
            if let Some((server, epoch)) = self.tickets.wants_request(fu) {
                if self.has_duties() || work {
                    self.tickets.note_request_sent(epoch);
                    fx.push(Effect::Send {
                        to: server,
                        msg: ProtocolMessage::TicketRequest { validator: self.me, epoch },
                    });
                    fx.push(Effect::SetTimer {
                        timer: TimerKind::TicketRetry { epoch },
                        after: 2 * self.params.delta(),
                    });
                }
            }
            if let Some((sn, ticket, picked)) = self.place_duty(fu) {
                self.propose_at(sn, ticket, picked, fx);
                continue;
            }
            let Some((sn, ticket)) = self.free_ticket(fu, fu + self.lookahead) else { return };
            // filling own slots below ones already in use avoids holes and
            // lets later duty blocks reference newer history
            let gap = self.ledger.highest_known().is_some_and(|h| sn < h);
            let open = sn < fu + (self.lookahead / 2).max(1);
            if !(gap || (open && work)) {
                return;
            }
            self.propose_at(sn, ticket, (Command::None, Vec::new(), None), fx);
        }
    }

    /// Finds a duty to embed and the slot to carry it: a due allocation,
    /// then consensus duties (lowest slot first), then FINALIZE and
    /// membership duties. A consensus duty that cannot be computed from the
    /// history referenceable at the lowest free slot jumps to the lowest
    /// free slot above all of that slot's consensus blocks; the skipped own
    /// slots are filled afterwards.
    fn place_duty(&mut self, fu: u64) -> Option<(u64, Option<TicketGrant>, Picked)> {
        let window = fu + self.lookahead;
        let low = self.free_ticket(fu, window);
        if let Some((sn, t)) = &low {
            if let Some(c) = self.tickets.allocation_duty(*sn) {
                return Some((*sn, t.clone(), (Command::Control(c), Vec::new(), None)));
            }
        }
        let mut order: Vec<usize> = (0..self.consensus_duties.len()).collect();
        order.sort_by_key(|i| self.consensus_duties[*i].slot());
        let mut moot = Vec::new();
        let mut chosen = None;
        'duties: for i in order {
            let duty = self.consensus_duties[i];
            let slot = duty.slot();
            if self.inflight_consensus.contains_key(&slot) {
                continue;
            }
            let until = if slot == fu { u64::MAX } else { window };
            let above = self
                .fallback
                .consensus_blocks(slot)
                .iter()
                .filter_map(|d| self.ledger.horizon(d))
                .max()
                .map_or(fu, |h| (h + 1).max(fu));
            let low_here = match &low {
                Some(l) => Some(l.clone()),
                None if slot == fu => self.free_ticket(fu, until),
                None => None,
            };
            let jump = match &low_here {
                Some((sn, _)) if *sn >= above => None,
                _ => self.free_ticket(above, until),
            };
            for (sn, ticket) in low_here.into_iter().chain(jump) {
                // reference whatever part of the slot's consensus history fits
                // below sn; the duty is computed against exactly that
                let (roots, refs): (Vec<Digest>, Vec<BlockRef>) = self
                    .fallback
                    .consensus_blocks(slot)
                    .iter()
                    .filter_map(|d| self.ledger.reference(d, sn).map(|r| (*d, r)))
                    .unzip();
                match self.fallback.materialize(duty, &roots) {
                    Materialized::Ready(cmd) => {
                        chosen = Some((i, (sn, ticket, (cmd, refs, Some(slot)))));
                        break 'duties;
                    }
                    Materialized::Wait => {}
                    Materialized::Moot => {
                        moot.push(i);
                        continue 'duties;
                    }
                }
            }
        }
        if let Some((i, _)) = chosen {
            moot.push(i);
        }
        moot.sort_unstable();
        for i in moot.into_iter().rev() {
            self.consensus_duties.remove(i);
        }
        if let Some((_, placed)) = chosen {
            return Some(placed);
        }
        if let Some((sn, ticket)) = low {
            if let Some(cmd) = self.finalize_duties.pop_front() {
                return Some((sn, ticket, (cmd, Vec::new(), None)));
            }
            let c = self.control_duties.pop_front()?;
            return Some((sn, ticket, (Command::Control(c), Vec::new(), None)));
        }
        let fin = self.finalize_duties.iter().position(|c| c.consensus_slot() == Some(fu))?;
        let (sn, ticket) = self.free_ticket(fu, u64::MAX)?;
        let cmd = self.finalize_duties.remove(fin)?;
        Some((sn, ticket, (cmd, Vec::new(), None)))
    }

    fn propose_at(
        &mut self,
        sn: u64,
        ticket: Option<TicketGrant>,
        (command, mut refs, consensus_slot): Picked,
        fx: &mut Vec<Effect>,
    ) {
        for r in self.ledger.take_frontier(sn) {
            if !refs.iter().any(|x| x.digest == r.digest) {
                refs.push(r);
            }
        }
        // filler blocks still need distinct digests, or a repeat would read
        // as already committed
        let payload = self.workload.pop_front().unwrap_or_else(|| self.bbca.next_local_seq().to_be_bytes().to_vec());
        let block = Arc::new(Block { sender: self.me, command, predecessors: refs, payload });
        self.tickets.mark_used(sn);
        let certifier = ticket.as_ref().map(|t| t.certifier);
        // fails only if the slot was given up between ticket lookup and broadcast
        if let Ok((id, outs)) = self.bbca.bcast(sn, block, ticket) {
            if certifier.is_none() {
                fx.push(Effect::Event(NodeEvent::TicketGrant {
                    validator: self.me,
                    slot: sn,
                    certifier: None,
                    snapshot: self.tickets.snapshot(),
                }));
            }
            if let Some(slot) = consensus_slot {
                self.inflight_consensus.entry(slot).or_default().insert(id);
            }
            let mut q: VecDeque<Internal> = outs.into_iter().map(Internal::Bbca).collect();
            self.drain(&mut q, fx);
        }
    }
}
