//! Slot allocation: which validator may broadcast at which slot.
//!
//! Three strategies share one interface: a deterministic round robin that
//! suspends a validator for half a lookahead window after it leaves a hole
//! (so a wrongly suspended validator can still help resolve a stalled
//! slot), a rotating ticket server that signs grants, and a hybrid where a per-rotation allocator
//! assigns the next rotation's slots to the validators that asked for them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::bbca::Verdict;
use crate::crypto::{KeyRing, Signer};
use crate::encoding::signed;
use crate::error::ProtocolError;
use crate::types::{quorum_2f1, Block, Command, ControlCommand, ProtocolParams, TicketGrant, ValidatorId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TicketPolicy {
    #[default]
    RoundRobin,
    Server {
        #[serde(default = "default_rotation_period")]
        rotation_period: u64,
    },
    Hybrid {
        /// Requests needed before the allocator hands out a custom rotation.
        /// `None` means 2f+1.
        #[serde(default)]
        threshold: Option<usize>,
        #[serde(default = "default_rotations_per_grant")]
        rotations_per_grant: u64,
    },
}

fn default_rotation_period() -> u64 {
    64
}

fn default_rotations_per_grant() -> u64 {
    1
}

/// One round-robin configuration, in force from `start` until the next one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RoundRobinEpoch {
    pub start: u64,
    pub active: Vec<ValidatorId>,
}

/// Round-robin owner of `slot` under a history of configurations sorted by
/// start slot. The first configuration fixes the base rotation; a validator
/// missing from a later one has its slots handed to the active validators in
/// turn, one per round, while every other slot keeps its base owner.
pub fn rr_owner(history: &[RoundRobinEpoch], slot: u64) -> Result<ValidatorId, ProtocolError> {
    let epoch = history.iter().rev().find(|e| e.start <= slot).ok_or(ProtocolError::StalePolicy(slot))?;
    let base = &history[0].active;
    let n = base.len() as u64;
    let owner = base[(slot % n) as usize];
    if epoch.active.contains(&owner) {
        return Ok(owner);
    }
    let rank = base.iter().filter(|v| !epoch.active.contains(v)).position(|v| *v == owner).unwrap_or(0) as u64;
    let round = (slot - epoch.start) / n;
    let idx = (round + rank) % epoch.active.len() as u64;
    Ok(epoch.active[idx as usize])
}

/// Ticket messages the node should send.
#[derive(Clone, Debug, PartialEq)]
pub enum TicketOutput {
    Request { to: ValidatorId, epoch: u64 },
    Grant { to: ValidatorId, grant: TicketGrant },
}

pub struct Tickets {
    me: ValidatorId,
    params: ProtocolParams,
    keys: KeyRing,
    signer: Signer,
    policy: TicketPolicy,
    lookahead: u64,
    removal_threshold: u32,
    overrides: BTreeMap<u64, Vec<ValidatorId>>,
    /// Slots this node already broadcast at.
    used: BTreeSet<u64>,

    history: Vec<RoundRobinEpoch>,
    /// `(validator, from, until)`: slots in `[from, until)` skip the
    /// validator.
    suspensions: Vec<(ValidatorId, u64, u64)>,
    suspension: u64,
    /// Number of membership changes applied; equal values mean equal
    /// policies, since all nodes apply changes in commit order.
    snapshot: u64,
    holes: BTreeMap<ValidatorId, u32>,

    /// Server side: next unassigned slot per epoch this node serves.
    served: BTreeMap<u64, u64>,
    /// Client side: grants received for this node.
    grants: BTreeMap<u64, TicketGrant>,
    request_epoch: u64,
    request_outstanding: bool,

    allocations: BTreeMap<u64, Vec<ValidatorId>>,
    requests: BTreeMap<u64, BTreeSet<ValidatorId>>,
    requested: BTreeSet<u64>,
}

impl Tickets {
    pub fn new(
        params: ProtocolParams,
        keys: KeyRing,
        signer: Signer,
        policy: TicketPolicy,
        lookahead: u64,
        removal_threshold: u32,
        overrides: BTreeMap<u64, Vec<ValidatorId>>,
    ) -> Self {
        let all: Vec<ValidatorId> = params.validators().collect();
        let mut allocations = BTreeMap::new();
        allocations.insert(0, all.clone());
        Tickets {
            me: signer.id(),
            params,
            keys,
            signer,
            policy,
            lookahead,
            removal_threshold: removal_threshold.max(1),
            overrides,
            used: BTreeSet::new(),
            history: vec![RoundRobinEpoch { start: 0, active: all }],
            suspensions: Vec::new(),
            suspension: (lookahead / 2).max(1),
            snapshot: 0,
            holes: BTreeMap::new(),
            served: BTreeMap::new(),
            grants: BTreeMap::new(),
            request_epoch: 0,
            request_outstanding: false,
            allocations,
            requests: BTreeMap::new(),
            requested: BTreeSet::new(),
        }
    }

    pub fn policy(&self) -> &TicketPolicy {
        &self.policy
    }

    pub fn lookahead(&self) -> u64 {
        self.lookahead
    }

    pub fn history(&self) -> &[RoundRobinEpoch] {
        &self.history
    }

    pub fn snapshot(&self) -> u64 {
        self.snapshot
    }

    /// Round-robin rotation in force at `slot`.
    pub fn active_at(&self, slot: u64) -> &[ValidatorId] {
        &self.history.iter().rev().find(|e| e.start <= slot).expect("history starts at slot 0").active
    }

    fn rotation_len(&self) -> u64 {
        match self.policy {
            TicketPolicy::Hybrid { rotations_per_grant, .. } => self.params.n() as u64 * rotations_per_grant.max(1),
            _ => u64::MAX,
        }
    }

    fn server_of(&self, epoch: u64) -> ValidatorId {
        ValidatorId((epoch % self.params.n() as u64) as u32)
    }

    fn server_period(&self) -> u64 {
        match self.policy {
            TicketPolicy::Server { rotation_period } => rotation_period.max(1),
            _ => u64::MAX,
        }
    }

    /// Deterministic owner of `slot` for the policies that have one. `None`
    /// when the owner is not known yet (hybrid allocation still pending) or
    /// the policy has no fixed owner (server).
    pub fn owner(&self, slot: u64) -> Option<ValidatorId> {
        match &self.policy {
            TicketPolicy::RoundRobin => rr_owner(&self.history, slot).ok(),
            TicketPolicy::Server { .. } => None,
            TicketPolicy::Hybrid { .. } => {
                let len = self.rotation_len();
                let rotation = slot / len;
                let alloc = self.allocations.get(&rotation)?;
                Some(alloc[((slot - rotation * len) % alloc.len() as u64) as usize])
            }
        }
    }

    fn owns(&self, v: ValidatorId, slot: u64) -> Option<bool> {
        if let Some(list) = self.overrides.get(&slot) {
            return Some(list.contains(&v));
        }
        self.owner(slot).map(|o| o == v)
    }

    /// Ticket part of the external validity predicate.
    pub fn validate(
        &self,
        sender: ValidatorId,
        sn: u64,
        ticket: Option<&TicketGrant>,
        first_uncommitted: u64,
    ) -> Verdict {
        if let TicketPolicy::Server { .. } = self.policy {
            if self.overrides.get(&sn).is_some_and(|l| l.contains(&sender)) {
                return Verdict::Valid;
            }
            let Some(g) = ticket else { return Verdict::Invalid };
            let epoch = sn / self.server_period();
            let ok = g.validator == sender
                && g.slot == sn
                && g.certifier == self.server_of(epoch)
                && g.sig.signer == g.certifier
                && self.keys.verify(&g.sig, &signed::ticket(g.validator, g.slot));
            return if ok { Verdict::Valid } else { Verdict::Invalid };
        }
        match self.owns(sender, sn) {
            Some(true) => Verdict::Valid,
            // a membership change committed below sn may still reassign it
            Some(false) if sn >= first_uncommitted && matches!(self.policy, TicketPolicy::RoundRobin) => {
                Verdict::Pending
            }
            Some(false) => Verdict::Invalid,
            None => Verdict::Pending,
        }
    }

    /// Lowest slot in `[from, until)` this node may broadcast at, skipping
    /// used and locally finalized slots.
    pub fn next_ticket(
        &self,
        from: u64,
        until: u64,
        finalized: impl Fn(u64) -> bool,
    ) -> Option<(u64, Option<TicketGrant>)> {
        if from >= until {
            return None;
        }
        if let TicketPolicy::Server { .. } = self.policy {
            let from_grants = self
                .grants
                .range(from..until)
                .find(|(s, _)| !self.used.contains(s) && !finalized(**s))
                .map(|(s, g)| (*s, Some(g.clone())));
            let from_overrides = self
                .overrides
                .range(from..until)
                .find(|(s, l)| l.contains(&self.me) && !self.used.contains(s) && !finalized(**s))
                .map(|(s, _)| (*s, None));
            return match (from_grants, from_overrides) {
                (Some(a), Some(b)) => Some(if a.0 <= b.0 { a } else { b }),
                (a, b) => a.or(b),
            };
        }
        (from..until)
            .find(|s| self.owns(self.me, *s) == Some(true) && !self.used.contains(s) && !finalized(*s))
            .map(|s| (s, None))
    }

    /// Lowest owned slot at or above `from` that is not used yet, ignoring
    /// the window. Used to decide whether this node is holding back others.
    pub fn lowest_unused_owned(&self, from: u64, below: u64) -> Option<u64> {
        match self.policy {
            TicketPolicy::Server { .. } => {
                self.grants.range(from..below).map(|(s, _)| *s).find(|s| !self.used.contains(s))
            }
            _ => (from..below).find(|s| self.owns(self.me, *s) == Some(true) && !self.used.contains(s)),
        }
    }

    pub fn mark_used(&mut self, slot: u64) {
        self.used.insert(slot);
    }

    /// Whether a HYBRID allocator must put an allocation into its block at
    /// `slot`, and which one.
    pub fn allocation_duty(&self, slot: u64) -> Option<ControlCommand> {
        let TicketPolicy::Hybrid { threshold, .. } = self.policy else { return None };
        let len = self.rotation_len();
        if !slot.is_multiple_of(len) || self.owner(slot) != Some(self.me) {
            return None;
        }
        let next = slot / len + 1;
        let reqs = self.requests.get(&next)?;
        let threshold = threshold.unwrap_or_else(|| quorum_2f1(&self.params));
        (reqs.len() >= threshold)
            .then(|| ControlCommand::Allocate { rotation: next, validators: reqs.iter().copied().collect() })
    }

    /// A slot entry became committed (`None` = hole). Applies membership
    /// changes that depend on the committed log; returns requests to send.
    pub fn on_commit(&mut self, slot: u64, block: Option<&Block>) -> Vec<TicketOutput> {
        let mut out = Vec::new();
        match self.policy {
            TicketPolicy::RoundRobin => self.rr_on_commit(slot, block),
            TicketPolicy::Hybrid { .. } => {
                let len = self.rotation_len();
                if slot.is_multiple_of(len) {
                    let rotation = slot / len;
                    let allocator = self.owner(slot);
                    let alloc = block
                        .filter(|b| Some(b.sender) == allocator)
                        .and_then(|b| match &b.command {
                            Command::Control(ControlCommand::Allocate { rotation: r, validators })
                                if *r == rotation + 1 && self.valid_allocation(validators) =>
                            {
                                Some(validators.clone())
                            }
                            _ => None,
                        })
                        .unwrap_or_else(|| self.params.validators().collect());
                    self.allocations.insert(rotation + 1, alloc);
                    self.request_next(rotation + 1, &mut out);
                }
            }
            TicketPolicy::Server { .. } => {}
        }
        out
    }

    fn valid_allocation(&self, validators: &[ValidatorId]) -> bool {
        !validators.is_empty()
            && validators.windows(2).all(|w| w[0] < w[1])
            && validators.iter().all(|v| self.params.contains(*v))
    }

    /// HYBRID: ask the allocator of the rotation after `known` for slots.
    fn request_next(&mut self, known: u64, out: &mut Vec<TicketOutput>) {
        let target = known + 1;
        if !self.requested.insert(target) {
            return;
        }
        let first = known * self.rotation_len();
        if let Some(allocator) = self.owner(first) {
            out.push(TicketOutput::Request { to: allocator, epoch: target });
        }
    }

    /// Requests to send at startup.
    pub fn start(&mut self) -> Vec<TicketOutput> {
        let mut out = Vec::new();
        if let TicketPolicy::Hybrid { .. } = self.policy {
            self.request_next(0, &mut out);
        }
        out
    }

    fn rr_on_commit(&mut self, slot: u64, block: Option<&Block>) {
        let Ok(owner) = rr_owner(&self.history, slot) else { return };
        if self.overrides.contains_key(&slot) {
            return;
        }
        match block {
            Some(b) => {
                if b.sender == owner {
                    self.holes.remove(&owner);
                }
                if let Command::Control(ControlCommand::Readd { validator }) = &b.command {
                    self.readd(*validator, slot + 1);
                }
            }
            None => {
                let count = self.holes.entry(owner).or_default();
                *count += 1;
                if *count >= self.removal_threshold {
                    self.remove(owner, slot + 1);
                }
            }
        }
    }

    /// Recomputes the round-robin history from the suspension intervals.
    fn rebuild_history(&mut self) {
        let mut points: BTreeSet<u64> = BTreeSet::from([0]);
        for (_, from, until) in &self.suspensions {
            points.insert(*from);
            points.insert(*until);
        }
        let mut history: Vec<RoundRobinEpoch> = Vec::new();
        for start in points {
            let active: Vec<ValidatorId> = self
                .params
                .validators()
                .filter(|v| !self.suspensions.iter().any(|(w, f, u)| w == v && *f <= start && start < *u))
                .collect();
            if history.last().is_some_and(|e| e.active == active) {
                continue;
            }
            history.push(RoundRobinEpoch { start, active });
        }
        self.history = history;
        self.snapshot += 1;
    }

    fn suspended_at(&self, slot: u64) -> impl Iterator<Item = ValidatorId> + '_ {
        self.suspensions.iter().filter(move |(_, f, u)| *f <= slot && slot < *u).map(|(v, _, _)| *v)
    }

    /// Takes `v` out of the rotation for the suspension period starting at
    /// `effective`, unless that would leave fewer than n - f active.
    fn remove(&mut self, v: ValidatorId, effective: u64) {
        let out: Vec<ValidatorId> = self.suspended_at(effective).collect();
        if out.contains(&v) || out.len() >= self.params.f() {
            return;
        }
        self.holes.remove(&v);
        self.suspensions.push((v, effective, effective.saturating_add(self.suspension)));
        self.rebuild_history();
    }

    /// Ends any suspension of `v` at `effective`.
    fn readd(&mut self, v: ValidatorId, effective: u64) {
        let mut changed = false;
        for (w, from, until) in &mut self.suspensions {
            if *w == v && *until > effective {
                *until = effective.max(*from);
                changed = true;
            }
        }
        if changed {
            self.suspensions.retain(|(_, f, u)| f < u);
            self.rebuild_history();
        }
    }

    // ---- server policy ----

    /// Whether this node should ask the server for a ticket now.
    pub fn wants_request(&self, first_uncommitted: u64) -> Option<(ValidatorId, u64)> {
        let TicketPolicy::Server { .. } = self.policy else { return None };
        if self.request_outstanding {
            return None;
        }
        let have = self.grants.range(first_uncommitted..).any(|(s, _)| !self.used.contains(s));
        if have {
            return None;
        }
        let epoch = self.request_epoch.max(first_uncommitted / self.server_period());
        Some((self.server_of(epoch), epoch))
    }

    pub fn note_request_sent(&mut self, epoch: u64) {
        self.request_epoch = epoch;
        self.request_outstanding = true;
    }

    /// The outstanding request went unanswered; move on to the next server.
    pub fn on_request_timeout(&mut self, epoch: u64) {
        if self.request_outstanding && self.request_epoch == epoch {
            self.request_outstanding = false;
            self.request_epoch = epoch + 1;
        }
    }

    pub fn on_request(&mut self, from: ValidatorId, epoch: u64) -> Vec<TicketOutput> {
        let mut out = Vec::new();
        match self.policy {
            TicketPolicy::Server { .. } => {
                if self.server_of(epoch) != self.me || !self.params.contains(from) {
                    return out;
                }
                let period = self.server_period();
                let next = self.served.entry(epoch).or_insert(epoch * period);
                if *next >= (epoch + 1) * period {
                    return out;
                }
                let slot = *next;
                *next += 1;
                let sig = self.signer.sign(&signed::ticket(from, slot));
                let grant = TicketGrant { validator: from, slot, certifier: self.me, sig };
                out.push(TicketOutput::Grant { to: from, grant });
            }
            TicketPolicy::Hybrid { .. } => {
                let len = self.rotation_len();
                if epoch >= 1 && self.params.contains(from) && self.owner((epoch - 1) * len) == Some(self.me) {
                    self.requests.entry(epoch).or_default().insert(from);
                }
            }
            TicketPolicy::RoundRobin => {}
        }
        out
    }

    /// Accepts a grant addressed to this node; returns whether it was new.
    pub fn on_grant(&mut self, grant: TicketGrant) -> bool {
        if grant.validator != self.me {
            return false;
        }
        let epoch = grant.slot / self.server_period();
        let ok = grant.certifier == self.server_of(epoch)
            && grant.sig.signer == grant.certifier
            && self.keys.verify(&grant.sig, &signed::ticket(grant.validator, grant.slot));
        if !ok || self.grants.contains_key(&grant.slot) {
            return false;
        }
        self.request_outstanding = false;
        self.request_epoch = epoch;
        self.grants.insert(grant.slot, grant);
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u32]) -> Vec<ValidatorId> {
        v.iter().map(|i| ValidatorId(*i)).collect()
    }

    fn tickets(me: u32, policy: TicketPolicy) -> Tickets {
        let params = ProtocolParams::new(4, 1, 1000, 2).unwrap();
        let keys = KeyRing::generate(4, 1);
        Tickets::new(params, keys.clone(), keys.signer(ValidatorId(me)), policy, 8, 1, BTreeMap::new())
    }

    #[test]
    fn round_robin_owners() {
        let h = vec![RoundRobinEpoch { start: 0, active: ids(&[0, 1, 2, 3]) }];
        assert_eq!(rr_owner(&h, 0).unwrap(), ValidatorId(0));
        assert_eq!(rr_owner(&h, 5).unwrap(), ValidatorId(1));
    }

    #[test]
    fn round_robin_after_removal() {
        let h = vec![
            RoundRobinEpoch { start: 0, active: ids(&[0, 1, 2, 3]) },
            RoundRobinEpoch { start: 8, active: ids(&[0, 1, 2]) },
        ];
        let owners: Vec<u32> = (8..12).map(|s| rr_owner(&h, s).unwrap().0).collect();
        assert_eq!(owners, vec![0, 1, 2, 0]);
        assert_eq!(rr_owner(&h, 7).unwrap(), ValidatorId(3));
        // only the removed validator's slots move
        let owners: Vec<u32> = (12..24).map(|s| rr_owner(&h, s).unwrap().0).collect();
        assert_eq!(owners, vec![0, 1, 2, 1, 0, 1, 2, 2, 0, 1, 2, 0]);
        let late = vec![RoundRobinEpoch { start: 4, active: ids(&[0]) }];
        assert_eq!(rr_owner(&late, 2), Err(ProtocolError::StalePolicy(2)));
    }

    #[test]
    fn hole_suspends_owner_from_next_slot() {
        // lookahead 8, so suspensions last 4 slots
        let mut t = tickets(0, TicketPolicy::RoundRobin);
        t.on_commit(3, None);
        assert_eq!(
            t.history(),
            &[
                RoundRobinEpoch { start: 0, active: ids(&[0, 1, 2, 3]) },
                RoundRobinEpoch { start: 4, active: ids(&[0, 1, 2]) },
                RoundRobinEpoch { start: 8, active: ids(&[0, 1, 2, 3]) },
            ]
        );
        assert_eq!(t.snapshot(), 1);
        assert_eq!(t.owner(3), Some(ValidatorId(3)));
        assert_eq!(t.owner(7), Some(ValidatorId(0)));
        assert_eq!(t.owner(11), Some(ValidatorId(3)));
        // a second suspension would leave fewer than n - f active
        t.on_commit(5, None);
        assert_eq!(t.active_at(6).len(), 3);
        assert_eq!(t.snapshot(), 1);
    }

    #[test]
    fn readd_ends_suspension() {
        let mut t = tickets(0, TicketPolicy::RoundRobin);
        t.on_commit(3, None);
        let b = Block {
            sender: ValidatorId(0),
            command: Command::Control(ControlCommand::Readd { validator: ValidatorId(3) }),
            predecessors: vec![],
            payload: vec![],
        };
        t.on_commit(5, Some(&b));
        assert_eq!(t.active_at(5), ids(&[0, 1, 2]).as_slice());
        assert_eq!(t.active_at(6), ids(&[0, 1, 2, 3]).as_slice());
        assert_eq!(t.snapshot(), 2);
    }

    #[test]
    fn ticket_validation_round_robin() {
        let t = tickets(0, TicketPolicy::RoundRobin);
        assert_eq!(t.validate(ValidatorId(1), 5, None, 0), Verdict::Valid);
        // not the owner under the current membership, which may still change
        assert_eq!(t.validate(ValidatorId(2), 5, None, 0), Verdict::Pending);
        assert_eq!(t.validate(ValidatorId(2), 5, None, 6), Verdict::Invalid);
        assert_eq!(t.validate(ValidatorId(1), 9, None, 0), Verdict::Valid);
        assert_eq!(t.next_ticket(0, 8, |_| false), Some((0, None)));
        assert_eq!(t.next_ticket(0, 8, |s| s == 0), Some((4, None)));
    }

    #[test]
    fn server_grants_consecutive_slots() {
        let mut server = tickets(0, TicketPolicy::Server { rotation_period: 64 });
        let g1 = server.on_request(ValidatorId(1), 0);
        let g2 = server.on_request(ValidatorId(2), 0);
        let slot = |o: &[TicketOutput]| match &o[0] {
            TicketOutput::Grant { grant, .. } => grant.slot,
            _ => panic!(),
        };
        assert_eq!((slot(&g1), slot(&g2)), (0, 1));
        // not the server of epoch 1
        assert!(server.on_request(ValidatorId(1), 1).is_empty());

        let mut client = tickets(1, TicketPolicy::Server { rotation_period: 64 });
        let TicketOutput::Grant { grant, .. } = g1[0].clone() else { panic!() };
        assert_eq!(client.validate(ValidatorId(1), 0, Some(&grant), 0), Verdict::Valid);
        assert_eq!(client.validate(ValidatorId(1), 0, None, 0), Verdict::Invalid);
        assert_eq!(client.validate(ValidatorId(2), 0, Some(&grant), 0), Verdict::Invalid);
        assert!(client.on_grant(grant));
        assert_eq!(client.next_ticket(0, 8, |_| false).map(|t| t.0), Some(0));
    }

    #[test]
    fn server_rejects_forged_grant() {
        let keys = KeyRing::generate(4, 1);
        let client = tickets(1, TicketPolicy::Server { rotation_period: 64 });
        // signed by p2, who does not serve epoch 0
        let sig = keys.signer(ValidatorId(2)).sign(&signed::ticket(ValidatorId(1), 3));
        let g = TicketGrant { validator: ValidatorId(1), slot: 3, certifier: ValidatorId(2), sig };
        assert_eq!(client.validate(ValidatorId(1), 3, Some(&g), 0), Verdict::Invalid);
    }

    #[test]
    fn hybrid_allocation_flow() {
        let policy = TicketPolicy::Hybrid { threshold: Some(3), rotations_per_grant: 1 };
        let mut alloc = tickets(0, policy.clone());
        // rotation 0 is everyone; slot 0's owner p0 allocates rotation 1
        assert_eq!(alloc.owner(2), Some(ValidatorId(2)));
        assert_eq!(alloc.owner(4), None);
        for v in [1, 2, 3] {
            alloc.on_request(ValidatorId(v), 1);
        }
        let cmd = alloc.allocation_duty(0).unwrap();
        assert_eq!(cmd, ControlCommand::Allocate { rotation: 1, validators: ids(&[1, 2, 3]) });
        let block =
            Block { sender: ValidatorId(0), command: Command::Control(cmd), predecessors: vec![], payload: vec![] };
        let mut other = tickets(2, policy);
        other.on_commit(0, Some(&block));
        let owners: Vec<u32> = (4..8).map(|s| other.owner(s).unwrap().0).collect();
        assert_eq!(owners, vec![1, 2, 3, 1]);
        // a hole at the first slot of rotation 1 falls back to everyone
        other.on_commit(4, None);
        assert_eq!(other.owner(8), Some(ValidatorId(0)));
    }
}
