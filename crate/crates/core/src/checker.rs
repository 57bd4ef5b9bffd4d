//! Post-hoc property checker over recorded traces.
//!
//! Pure and deterministic: a trace in, a list of violations out. Properties
//! quantify over correct validators only, i.e. those not listed as faulty in
//! the run metadata. Eventually-properties only consider activity started
//! before `horizon - slack`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::trace::{MsgKind, MsgSummary, RunMeta, TraceEvent, TraceRecord};
use crate::types::{Block, Digest, InstanceId, SlotNumber, ValidatorId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Check {
    /// Delivered blocks of correct senders were broadcast by them.
    P1Integrity,
    /// At most one delivery per instance per node.
    P2NoDuplication,
    /// Deliveries of one instance agree on slot and block.
    P3Consistency,
    /// Deliveries at one slot agree on the instance.
    P4UniqueSequencing,
    /// Correct senders' blocks are delivered everywhere.
    P5Validity,
    /// Post-GST uncontested slots are delivered with their slot.
    P6WeakSequencing,
    /// Delivered blocks are well formed.
    P7ExternalValidity,
    /// Slots with an all-empty adopt quorum never see a delivery.
    P8Finalization,
    LedgerConsistency,
    PrefixAgreement,
    LogGrowth,
    EventualProgress,
    CausalOrder,
    FinalBeforeCommit,
    WriteOnce,
    VbcSafety,
    DecisionForcing,
    TicketExclusivity,
    ClockMonotonic,
    EventualDelivery,
    FaultBudget,
}

impl Check {
    pub const ALL: [Check; 21] = [
        Check::P1Integrity,
        Check::P2NoDuplication,
        Check::P3Consistency,
        Check::P4UniqueSequencing,
        Check::P5Validity,
        Check::P6WeakSequencing,
        Check::P7ExternalValidity,
        Check::P8Finalization,
        Check::LedgerConsistency,
        Check::PrefixAgreement,
        Check::LogGrowth,
        Check::EventualProgress,
        Check::CausalOrder,
        Check::FinalBeforeCommit,
        Check::WriteOnce,
        Check::VbcSafety,
        Check::DecisionForcing,
        Check::TicketExclusivity,
        Check::ClockMonotonic,
        Check::EventualDelivery,
        Check::FaultBudget,
    ];

    /// Properties that must hold on every prefix of every run.
    pub const SAFETY: [Check; 14] = [
        Check::P1Integrity,
        Check::P2NoDuplication,
        Check::P3Consistency,
        Check::P4UniqueSequencing,
        Check::P7ExternalValidity,
        Check::P8Finalization,
        Check::LedgerConsistency,
        Check::PrefixAgreement,
        Check::CausalOrder,
        Check::FinalBeforeCommit,
        Check::WriteOnce,
        Check::VbcSafety,
        Check::DecisionForcing,
        Check::ClockMonotonic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::P1Integrity => "P1",
            Check::P2NoDuplication => "P2",
            Check::P3Consistency => "P3",
            Check::P4UniqueSequencing => "P4",
            Check::P5Validity => "P5",
            Check::P6WeakSequencing => "P6",
            Check::P7ExternalValidity => "P7",
            Check::P8Finalization => "P8",
            Check::LedgerConsistency => "consistency",
            Check::PrefixAgreement => "prefix_agreement",
            Check::LogGrowth => "log_growth",
            Check::EventualProgress => "eventual_progress",
            Check::CausalOrder => "causal_order",
            Check::FinalBeforeCommit => "final_before_commit",
            Check::WriteOnce => "write_once",
            Check::VbcSafety => "vbc_safety",
            Check::DecisionForcing => "decision_forcing",
            Check::TicketExclusivity => "ticket_exclusivity",
            Check::ClockMonotonic => "clock_monotonic",
            Check::EventualDelivery => "eventual_delivery",
            Check::FaultBudget => "fault_budget",
        }
    }

    /// Parses a comma-separated list; `all` and `safety` expand to groups.
    pub fn parse_list(s: &str) -> Result<Vec<Check>, UnknownCheck> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "all" => out.extend(Check::ALL),
                "safety" => out.extend(Check::SAFETY),
                p => out.push(p.parse()?),
            }
        }
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown check `{0}`")]
pub struct UnknownCheck(pub String);

impl FromStr for Check {
    type Err = UnknownCheck;
    fn from_str(s: &str) -> Result<Self, UnknownCheck> {
        Check::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(s)).ok_or_else(|| UnknownCheck(s.to_owned()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub check: Check,
    pub time: u64,
    pub node: Option<ValidatorId>,
    /// Index of the offending trace record, if a single record is to blame.
    pub record: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] t={}", self.check, self.time)?;
        if let Some(n) = self.node {
            write!(f, " at {n}")?;
        }
        if let Some(r) = self.record {
            write!(f, " (record {r})")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct CheckOptions {
    /// Eventually-properties ignore activity started after
    /// `horizon - slack`. `None` means 20·Δ.
    pub slack: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CheckError {
    #[error("trace has no META record")]
    MissingMeta,
}

struct Delivery<'a> {
    rec: usize,
    time: u64,
    node: ValidatorId,
    id: InstanceId,
    sn: SlotNumber,
    digest: Digest,
    block: &'a Arc<Block>,
}

/// Pre-digested view of a trace shared by all checks.
struct Ctx<'a> {
    trace: &'a [TraceRecord],
    meta: &'a RunMeta,
    faulty: BTreeSet<ValidatorId>,
    cutoff: u64,
    deliveries: Vec<Delivery<'a>>,
}

impl<'a> Ctx<'a> {
    fn new(trace: &'a [TraceRecord], opts: CheckOptions) -> Result<Self, CheckError> {
        let meta = crate::trace::meta(trace).ok_or(CheckError::MissingMeta)?;
        let slack = opts.slack.unwrap_or(20 * meta.delta);
        let faulty: BTreeSet<ValidatorId> = meta.faulty.iter().copied().collect();
        let deliveries = trace
            .iter()
            .enumerate()
            .filter_map(|(i, r)| match &r.event {
                TraceEvent::BbcaDeliverCommit { id, sn, digest, block, .. } => {
                    let node = r.node?;
                    (!faulty.contains(&node)).then_some(Delivery {
                        rec: i,
                        time: r.time,
                        node,
                        id: *id,
                        sn: *sn,
                        digest: *digest,
                        block,
                    })
                }
                _ => None,
            })
            .collect();
        Ok(Ctx { trace, meta, cutoff: meta.horizon.saturating_sub(slack), faulty, deliveries })
    }

    fn correct(&self, v: ValidatorId) -> bool {
        !self.faulty.contains(&v)
    }

    fn correct_nodes(&self) -> impl Iterator<Item = ValidatorId> + '_ {
        (0..self.meta.n as u32).map(ValidatorId).filter(|v| self.correct(*v))
    }

    /// Records emitted by correct nodes, with their index.
    fn correct_records(&self) -> impl Iterator<Item = (usize, &'a TraceRecord, ValidatorId)> + '_ {
        self.trace.iter().enumerate().filter_map(|(i, r)| r.node.filter(|n| self.correct(*n)).map(|n| (i, r, n)))
    }

    /// INITIATEs sent by correct validators: (record, time, sender, id, sn, digest).
    fn correct_initiates(&self) -> Vec<(usize, u64, ValidatorId, InstanceId, u64, Digest)> {
        self.correct_records()
            .filter_map(|(i, r, n)| match &r.event {
                TraceEvent::MsgSent {
                    msg: MsgSummary { kind: MsgKind::Initiate, id: Some(id), sn: Some(SlotNumber::Slot(s)), digest: Some(d) },
                    ..
                } => Some((i, r.time, n, *id, *s, *d)),
                _ => None,
            })
            .collect()
    }
}

fn v(check: Check, time: u64, node: Option<ValidatorId>, record: Option<usize>, message: String) -> Violation {
    Violation { check, time, node, record, message }
}

/// Runs the selected checks. Violations are reported per check in trace
/// order.
pub fn check_trace(trace: &[TraceRecord], checks: &[Check], opts: CheckOptions) -> Result<Vec<Violation>, CheckError> {
    let ctx = Ctx::new(trace, opts)?;
    let mut out = Vec::new();
    for c in checks {
        let found = match c {
            Check::P1Integrity => p1(&ctx),
            Check::P2NoDuplication => p2(&ctx),
            Check::P3Consistency => p3(&ctx),
            Check::P4UniqueSequencing => p4(&ctx),
            Check::P5Validity => p5(&ctx),
            Check::P6WeakSequencing => p6(&ctx),
            Check::P7ExternalValidity => p7(&ctx),
            Check::P8Finalization => p8(&ctx),
            Check::LedgerConsistency => ledger_consistency(&ctx),
            Check::PrefixAgreement => prefix_agreement(&ctx),
            Check::LogGrowth => log_growth(&ctx),
            Check::EventualProgress => eventual_progress(&ctx),
            Check::CausalOrder => causal_order(&ctx),
            Check::FinalBeforeCommit => final_before_commit(&ctx),
            Check::WriteOnce => write_once(&ctx),
            Check::VbcSafety => vbc_safety(&ctx),
            Check::DecisionForcing => decision_forcing(&ctx),
            Check::TicketExclusivity => ticket_exclusivity(&ctx),
            Check::ClockMonotonic => clock_monotonic(&ctx),
            Check::EventualDelivery => eventual_delivery(&ctx),
            Check::FaultBudget => fault_budget(&ctx),
        };
        out.extend(found);
    }
    Ok(out)
}

fn p1(ctx: &Ctx) -> Vec<Violation> {
    let mut sent: HashMap<InstanceId, HashSet<Digest>> = HashMap::new();
    let mut out = Vec::new();
    for (i, r, n) in ctx.correct_records() {
        match &r.event {
            TraceEvent::MsgSent { msg, .. } if matches!(msg.kind, MsgKind::Initiate | MsgKind::VrbSend) => {
                if let (Some(id), Some(d)) = (msg.id, msg.digest) {
                    if id.sender == n {
                        sent.entry(id).or_default().insert(d);
                    }
                }
            }
            TraceEvent::BbcaDeliverCommit { id, digest, .. }
                if ctx.correct(id.sender) && !sent.get(id).is_some_and(|s| s.contains(digest)) =>
            {
                let msg = format!("delivered {} for {id:?} never broadcast by its sender", digest.short());
                out.push(v(Check::P1Integrity, r.time, Some(n), Some(i), msg));
            }
            _ => {}
        }
    }
    out
}

fn p2(ctx: &Ctx) -> Vec<Violation> {
    let mut seen = HashSet::new();
    ctx.deliveries
        .iter()
        .filter(|d| !seen.insert((d.node, d.id)))
        .map(|d| v(Check::P2NoDuplication, d.time, Some(d.node), Some(d.rec), format!("{:?} delivered twice", d.id)))
        .collect()
}

fn p3(ctx: &Ctx) -> Vec<Violation> {
    let mut first: HashMap<InstanceId, (SlotNumber, Digest, ValidatorId)> = HashMap::new();
    let mut out = Vec::new();
    for d in &ctx.deliveries {
        let (sn, dig, who) = *first.entry(d.id).or_insert((d.sn, d.digest, d.node));
        if (sn, dig) != (d.sn, d.digest) {
            let msg = format!(
                "{:?}: {who} delivered ({sn:?}, {}) but this node delivered ({:?}, {})",
                d.id,
                dig.short(),
                d.sn,
                d.digest.short()
            );
            out.push(v(Check::P3Consistency, d.time, Some(d.node), Some(d.rec), msg));
        }
    }
    out
}

fn p4(ctx: &Ctx) -> Vec<Violation> {
    let mut first: HashMap<u64, (InstanceId, ValidatorId)> = HashMap::new();
    let mut out = Vec::new();
    for d in &ctx.deliveries {
        let SlotNumber::Slot(s) = d.sn else { continue };
        let (id, who) = *first.entry(s).or_insert((d.id, d.node));
        if id != d.id {
            let msg = format!("slot {s}: {who} delivered {id:?}, this node delivered {:?}", d.id);
            out.push(v(Check::P4UniqueSequencing, d.time, Some(d.node), Some(d.rec), msg));
        }
    }
    out
}

/// Instances each correct node delivered, with the delivered digest.
fn delivered_by_node(ctx: &Ctx) -> BTreeMap<ValidatorId, HashMap<InstanceId, (SlotNumber, Digest)>> {
    let mut m: BTreeMap<ValidatorId, HashMap<InstanceId, (SlotNumber, Digest)>> =
        ctx.correct_nodes().map(|n| (n, HashMap::new())).collect();
    for d in &ctx.deliveries {
        m.entry(d.node).or_default().entry(d.id).or_insert((d.sn, d.digest));
    }
    m
}

fn p5(ctx: &Ctx) -> Vec<Violation> {
    let delivered = delivered_by_node(ctx);
    let mut out = Vec::new();
    for (i, t, sender, id, s, d) in ctx.correct_initiates() {
        if t > ctx.cutoff {
            continue;
        }
        for (node, got) in &delivered {
            match got.get(&id) {
                Some((sn, dd)) if *dd == d && (*sn == SlotNumber::Slot(s) || sn.is_slotless()) => {}
                other => {
                    let msg = format!("{node} never delivered {id:?} (slot {s}) from correct {sender}; got {other:?}");
                    out.push(v(Check::P5Validity, t, Some(*node), Some(i), msg));
                }
            }
        }
    }
    out
}

fn p6(ctx: &Ctx) -> Vec<Violation> {
    let mut bcasters: HashMap<u64, HashSet<InstanceId>> = HashMap::new();
    let mut finalized: HashSet<u64> = HashSet::new();
    for r in ctx.trace {
        match &r.event {
            TraceEvent::MsgSent {
                msg: MsgSummary { kind: MsgKind::Initiate, id: Some(id), sn: Some(SlotNumber::Slot(s)), .. },
                ..
            }
            | TraceEvent::MsgSent {
                msg: MsgSummary { kind: MsgKind::VrbSend, id: Some(id), sn: Some(SlotNumber::Slot(s)), .. },
                ..
            } => {
                bcasters.entry(*s).or_default().insert(*id);
            }
            TraceEvent::BbcaAdopt { sn, .. } if r.node.is_some_and(|n| ctx.correct(n)) => {
                finalized.insert(*sn);
            }
            _ => {}
        }
    }
    let delivered = delivered_by_node(ctx);
    let mut out = Vec::new();
    for (i, t, _, id, s, d) in ctx.correct_initiates() {
        if t < ctx.meta.gst || t > ctx.cutoff || finalized.contains(&s) || bcasters.get(&s).is_some_and(|b| b.len() > 1)
        {
            continue;
        }
        for (node, got) in &delivered {
            if got.get(&id) != Some(&(SlotNumber::Slot(s), d)) {
                let msg = format!("{node} did not deliver uncontested {id:?} at slot {s}; got {:?}", got.get(&id));
                out.push(v(Check::P6WeakSequencing, t, Some(*node), Some(i), msg));
            }
        }
    }
    out
}

/// Highest slot reachable from a block through its predecessors (its own
/// slot included), from the block bodies seen in the trace.
fn horizons(ctx: &Ctx) -> HashMap<Digest, Option<u64>> {
    let mut blocks: HashMap<Digest, (&Arc<Block>, SlotNumber)> = HashMap::new();
    for r in ctx.trace {
        if let TraceEvent::BbcaDeliverCommit { digest, block, sn, .. } = &r.event {
            blocks.entry(*digest).or_insert((block, *sn));
        }
    }
    let mut memo: HashMap<Digest, Option<u64>> = HashMap::new();
    for start in blocks.keys().copied().collect::<Vec<_>>() {
        let mut stack = vec![(start, false)];
        while let Some((d, expanded)) = stack.pop() {
            if memo.contains_key(&d) {
                continue;
            }
            let Some((b, sn)) = blocks.get(&d) else {
                memo.insert(d, None);
                continue;
            };
            if expanded {
                let h = b.predecessors.iter().filter_map(|p| memo.get(&p.digest).copied().flatten()).max();
                memo.insert(d, h.max(sn.as_slot()));
            } else {
                stack.push((d, true));
                stack
                    .extend(b.predecessors.iter().filter(|p| !memo.contains_key(&p.digest)).map(|p| (p.digest, false)));
            }
        }
    }
    memo
}

fn p7(ctx: &Ctx) -> Vec<Violation> {
    let finalized: HashSet<Digest> = ctx
        .correct_records()
        .filter_map(|(_, r, _)| match &r.event {
            TraceEvent::Final { digest, .. } => Some(*digest),
            _ => None,
        })
        .collect();
    let horizon = horizons(ctx);
    let mut out = Vec::new();
    for d in &ctx.deliveries {
        let b = d.block;
        let mut problems = Vec::new();
        if b.sender != d.id.sender {
            problems.push(format!("block sender {} differs from instance sender", b.sender));
        }
        if !b.has_unique_predecessors() {
            problems.push("duplicate predecessors".to_owned());
        }
        if let crate::types::Command::Proposal { view, .. } = b.command {
            if b.sender.0 as u64 != view % ctx.meta.n as u64 {
                problems.push(format!("proposal for view {view} from non-leader"));
            }
        }
        for p in &b.predecessors {
            if d.time <= ctx.cutoff && !finalized.contains(&p.digest) {
                problems.push(format!("predecessor {} never finalized", p.digest.short()));
            }
            if let (SlotNumber::Slot(s), Some(Some(h))) = (d.sn, horizon.get(&p.digest)) {
                if *h >= s {
                    problems.push(format!("predecessor {} reaches slot {h} >= {s}", p.digest.short()));
                }
            }
        }
        if !problems.is_empty() {
            let msg = format!("{:?} {}: {}", d.id, d.digest.short(), problems.join("; "));
            out.push(v(Check::P7ExternalValidity, d.time, Some(d.node), Some(d.rec), msg));
        }
    }
    out
}

fn p8(ctx: &Ctx) -> Vec<Violation> {
    let quorum = 2 * ctx.meta.f + 1;
    let mut empty_adopts: HashMap<u64, BTreeSet<ValidatorId>> = HashMap::new();
    let mut empty_slots: BTreeMap<u64, u64> = BTreeMap::new();
    for (_, r, n) in ctx.correct_records() {
        match &r.event {
            TraceEvent::BbcaAdopt { sn, cert, .. } if cert.is_empty() => {
                let set = empty_adopts.entry(*sn).or_default();
                set.insert(n);
                if set.len() >= quorum {
                    empty_slots.entry(*sn).or_insert(r.time);
                }
            }
            TraceEvent::VbcParticipate { slot, certified, .. }
                if certified.len() >= quorum && certified.iter().all(|(_, c)| c.is_none()) =>
            {
                empty_slots.entry(*slot).or_insert(r.time);
            }
            _ => {}
        }
    }
    ctx.deliveries
        .iter()
        .filter_map(|d| {
            let s = d.sn.as_slot()?;
            let at = empty_slots.get(&s)?;
            let msg = format!("slot {s} had an all-empty adopt quorum (t={at}) yet {:?} was delivered there", d.id);
            Some(v(Check::P8Finalization, d.time, Some(d.node), Some(d.rec), msg))
        })
        .collect()
}

/// A committed value with the index and time of its record.
type Committed = (Option<Digest>, usize, u64);

/// Per correct node: the values committed at each slot.
fn slot_values(ctx: &Ctx) -> BTreeMap<ValidatorId, BTreeMap<u64, Vec<Committed>>> {
    let mut m: BTreeMap<ValidatorId, BTreeMap<u64, Vec<Committed>>> =
        ctx.correct_nodes().map(|n| (n, BTreeMap::new())).collect();
    for (i, r, n) in ctx.correct_records() {
        if let TraceEvent::Commit { slot, digest, own_slot, .. } = &r.event {
            if digest.is_none() || *own_slot == Some(SlotNumber::Slot(*slot)) {
                m.entry(n).or_default().entry(*slot).or_default().push((*digest, i, r.time));
            }
        }
    }
    m
}

fn show(d: Option<Digest>) -> String {
    d.map_or_else(|| "HOLE".to_owned(), |d| d.short())
}

fn ledger_consistency(ctx: &Ctx) -> Vec<Violation> {
    let mut first: BTreeMap<u64, (Option<Digest>, ValidatorId)> = BTreeMap::new();
    let mut out = Vec::new();
    let mut all: Vec<(usize, u64, ValidatorId, u64, Option<Digest>)> = Vec::new();
    for (n, slots) in slot_values(ctx) {
        for (s, vals) in slots {
            for (d, i, t) in vals {
                all.push((i, t, n, s, d));
            }
        }
    }
    all.sort();
    for (i, t, n, s, d) in all {
        let (d0, who) = *first.entry(s).or_insert((d, n));
        if d0 != d {
            let msg = format!("slot {s}: {who} committed {}, this node committed {}", show(d0), show(d));
            out.push(v(Check::LedgerConsistency, t, Some(n), Some(i), msg));
        }
    }
    out
}

fn prefix_agreement(ctx: &Ctx) -> Vec<Violation> {
    type Seq = Vec<(u64, Option<Digest>, usize, u64)>;
    let mut seqs: BTreeMap<ValidatorId, Seq> = ctx.correct_nodes().map(|n| (n, Vec::new())).collect();
    for (i, r, n) in ctx.correct_records() {
        if let TraceEvent::Commit { slot, digest, .. } = &r.event {
            seqs.entry(n).or_default().push((*slot, *digest, i, r.time));
        }
    }
    let nodes: Vec<_> = seqs.keys().copied().collect();
    let mut out = Vec::new();
    for (a_i, a) in nodes.iter().enumerate() {
        for b in &nodes[a_i + 1..] {
            let (sa, sb) = (&seqs[a], &seqs[b]);
            if let Some(k) = sa.iter().zip(sb.iter()).position(|(x, y)| (x.0, x.1) != (y.0, y.1)) {
                let (x, y) = (&sa[k], &sb[k]);
                let msg = format!(
                    "commit #{k} differs: {a} has (slot {}, {}), {b} has (slot {}, {})",
                    x.0,
                    show(x.1),
                    y.0,
                    show(y.1)
                );
                out.push(v(Check::PrefixAgreement, x.3.max(y.3), Some(*b), Some(y.2), msg));
            }
        }
    }
    out
}

fn log_growth(ctx: &Ctx) -> Vec<Violation> {
    let Some(max) = ctx.correct_initiates().iter().filter(|x| x.1 <= ctx.cutoff).map(|x| x.4).max() else {
        return Vec::new();
    };
    let values = slot_values(ctx);
    // A slot decided for a block that was already committed earlier gets no
    // COMMIT of its own; it still counts as settled.
    let mut committed: HashMap<ValidatorId, HashSet<Digest>> = HashMap::new();
    let mut decided: HashMap<ValidatorId, Vec<(u64, Digest)>> = HashMap::new();
    for (_, r, n) in ctx.correct_records() {
        match &r.event {
            TraceEvent::Commit { digest: Some(d), .. } => {
                committed.entry(n).or_default().insert(*d);
            }
            TraceEvent::VbcDecide { slot, value: Some(d) } => decided.entry(n).or_default().push((*slot, *d)),
            _ => {}
        }
    }
    let mut out = Vec::new();
    for (n, slots) in values {
        let done = committed.get(&n);
        let settled: HashSet<u64> = decided
            .get(&n)
            .into_iter()
            .flatten()
            .filter(|(_, d)| done.is_some_and(|c| c.contains(d)))
            .map(|x| x.0)
            .collect();
        if let Some(s) = (0..=max).find(|s| !slots.contains_key(s) && !settled.contains(s)) {
            let msg = format!("slot {s} not committed by the horizon (slots up to {max} were proposed in time)");
            out.push(v(Check::LogGrowth, ctx.meta.horizon, Some(n), None, msg));
        }
    }
    out
}

fn eventual_progress(ctx: &Ctx) -> Vec<Violation> {
    let m = ctx.meta;
    if !m.faulty.is_empty() || !m.slow.is_empty() || !m.contended_slots.is_empty() {
        return Vec::new();
    }
    let settled = m.gst + 2 * m.delta;
    let proposed_late: HashSet<u64> =
        ctx.correct_initiates().into_iter().filter(|x| x.1 >= settled).map(|x| x.4).collect();
    ctx.correct_records()
        .filter_map(|(i, r, n)| match &r.event {
            TraceEvent::Commit { slot, digest: None, .. } if proposed_late.contains(slot) => {
                let msg = format!("slot {slot} committed as HOLE although proposed after stabilization");
                Some(v(Check::EventualProgress, r.time, Some(n), Some(i), msg))
            }
            _ => None,
        })
        .collect()
}

fn causal_order(ctx: &Ctx) -> Vec<Violation> {
    let mut blocks: HashMap<Digest, &Arc<Block>> = HashMap::new();
    for r in ctx.trace {
        if let TraceEvent::BbcaDeliverCommit { digest, block, .. } = &r.event {
            blocks.entry(*digest).or_insert(block);
        }
    }
    let mut committed: BTreeMap<ValidatorId, HashSet<Digest>> = BTreeMap::new();
    let mut out = Vec::new();
    for (i, r, n) in ctx.correct_records() {
        let TraceEvent::Commit { digest: Some(d), .. } = &r.event else { continue };
        let done = committed.entry(n).or_default();
        if let Some(b) = blocks.get(d) {
            if let Some(p) = b.predecessors.iter().find(|p| !done.contains(&p.digest)) {
                let msg = format!("{} committed before its predecessor {}", d.short(), p.digest.short());
                out.push(v(Check::CausalOrder, r.time, Some(n), Some(i), msg));
            }
        }
        done.insert(*d);
    }
    out
}

fn final_before_commit(ctx: &Ctx) -> Vec<Violation> {
    let mut finals: BTreeMap<ValidatorId, HashSet<Digest>> = BTreeMap::new();
    let mut out = Vec::new();
    for (i, r, n) in ctx.correct_records() {
        match &r.event {
            TraceEvent::Final { digest, .. } => {
                finals.entry(n).or_default().insert(*digest);
            }
            TraceEvent::Commit { digest: Some(d), .. } if !finals.get(&n).is_some_and(|f| f.contains(d)) => {
                let msg = format!("{} committed without a prior FINAL", d.short());
                out.push(v(Check::FinalBeforeCommit, r.time, Some(n), Some(i), msg));
            }
            _ => {}
        }
    }
    out
}

fn write_once(ctx: &Ctx) -> Vec<Violation> {
    let mut finals: HashMap<(ValidatorId, u64), Digest> = HashMap::new();
    let mut out = Vec::new();
    for (i, r, n) in ctx.correct_records() {
        if let TraceEvent::Final { digest, sn: SlotNumber::Slot(s) } = &r.event {
            let d0 = *finals.entry((n, *s)).or_insert(*digest);
            if d0 != *digest {
                let msg = format!("slot {s} finalized with {} and later {}", d0.short(), digest.short());
                out.push(v(Check::WriteOnce, r.time, Some(n), Some(i), msg));
            }
        }
    }
    for (n, slots) in slot_values(ctx) {
        for (s, vals) in slots {
            if let Some((d, i, t)) = vals.iter().skip(1).find(|x| x.0 != vals[0].0) {
                let msg = format!("slot {s} committed as {} and as {}", show(vals[0].0), show(*d));
                out.push(v(Check::WriteOnce, *t, Some(n), Some(*i), msg));
            }
        }
    }
    out
}

fn decisions(ctx: &Ctx) -> Vec<(usize, u64, ValidatorId, u64, Option<Digest>)> {
    ctx.correct_records()
        .filter_map(|(i, r, n)| match &r.event {
            TraceEvent::VbcDecide { slot, value } => Some((i, r.time, n, *slot, *value)),
            _ => None,
        })
        .collect()
}

fn vbc_safety(ctx: &Ctx) -> Vec<Violation> {
    let mut first: BTreeMap<u64, (Option<Digest>, ValidatorId)> = BTreeMap::new();
    let mut out = Vec::new();
    for (i, t, n, s, d) in decisions(ctx) {
        let (d0, who) = *first.entry(s).or_insert((d, n));
        if d0 != d {
            let msg = format!("slot {s}: {who} decided {}, this node decided {}", show(d0), show(d));
            out.push(v(Check::VbcSafety, t, Some(n), Some(i), msg));
        }
    }
    out
}

fn decision_forcing(ctx: &Ctx) -> Vec<Violation> {
    let mut delivered: BTreeMap<u64, BTreeSet<Digest>> = BTreeMap::new();
    for d in &ctx.deliveries {
        if let SlotNumber::Slot(s) = d.sn {
            delivered.entry(s).or_default().insert(d.digest);
        }
    }
    decisions(ctx)
        .into_iter()
        .filter_map(|(i, t, n, s, d)| {
            let got = delivered.get(&s)?;
            if d.is_some_and(|d| got.contains(&d)) && got.len() == 1 {
                return None;
            }
            let shown: Vec<String> = got.iter().map(|x| x.short()).collect();
            let msg = format!("slot {s} decided {} but {} was delivered there", show(d), shown.join(","));
            Some(v(Check::DecisionForcing, t, Some(n), Some(i), msg))
        })
        .collect()
}

fn ticket_exclusivity(ctx: &Ctx) -> Vec<Violation> {
    let contended: HashSet<u64> = ctx.meta.contended_slots.iter().copied().collect();
    // grants are exclusive per membership snapshot; a switchover may
    // legitimately hand a slot to a new owner
    let mut owners: BTreeMap<(u64, u64), ValidatorId> = BTreeMap::new();
    let mut out = Vec::new();
    for (i, r, n) in ctx.correct_records() {
        let TraceEvent::TicketGrant { validator, slot, snapshot, .. } = &r.event else { continue };
        if contended.contains(slot) || !ctx.correct(*validator) {
            continue;
        }
        let o = *owners.entry((*snapshot, *slot)).or_insert(*validator);
        if o != *validator {
            let msg = format!("slot {slot} granted to both {o} and {validator}");
            out.push(v(Check::TicketExclusivity, r.time, Some(n), Some(i), msg));
        }
    }
    out
}

fn clock_monotonic(ctx: &Ctx) -> Vec<Violation> {
    ctx.trace
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1].time < w[0].time)
        .map(|(i, w)| {
            let msg = format!("time went back from {} to {}", w[0].time, w[1].time);
            v(Check::ClockMonotonic, w[1].time, w[1].node, Some(i + 1), msg)
        })
        .collect()
}

fn eventual_delivery(ctx: &Ctx) -> Vec<Violation> {
    if !ctx.trace.iter().any(|r| matches!(r.event, TraceEvent::MsgDelivered { .. })) {
        return Vec::new();
    }
    type Key<'a> = (ValidatorId, ValidatorId, &'a MsgSummary);
    let mut early: HashMap<Key, (u32, usize, u64)> = HashMap::new();
    let mut delivered: HashMap<Key, u32> = HashMap::new();
    let correct: Vec<ValidatorId> = ctx.correct_nodes().collect();
    for (i, r, n) in ctx.correct_records() {
        match &r.event {
            TraceEvent::MsgSent { to, msg, .. } if r.time <= ctx.cutoff => {
                let targets: Vec<ValidatorId> = match to {
                    Some(t) => vec![*t],
                    None => correct.clone(),
                };
                for t in targets.into_iter().filter(|t| ctx.correct(*t)) {
                    early.entry((n, t, msg)).or_insert((0, i, r.time)).0 += 1;
                }
            }
            TraceEvent::MsgDelivered { from, msg, .. } if ctx.correct(*from) => {
                *delivered.entry((*from, n, msg)).or_default() += 1;
            }
            _ => {}
        }
    }
    let mut out: Vec<Violation> = early
        .into_iter()
        .filter(|(k, (c, _, _))| delivered.get(k).copied().unwrap_or(0) < *c)
        .map(|((from, to, msg), (_, i, t))| {
            let m = format!("{:?} from {from} to {to} never delivered", msg.kind);
            v(Check::EventualDelivery, t, Some(from), Some(i), m)
        })
        .collect();
    out.sort_by_key(|x| x.record);
    out
}

fn fault_budget(ctx: &Ctx) -> Vec<Violation> {
    let mut out = Vec::new();
    if ctx.faulty.len() > ctx.meta.f {
        out.push(v(Check::FaultBudget, 0, None, None, format!("{} faulty validators > f", ctx.faulty.len())));
    }
    let acting: BTreeSet<ValidatorId> =
        ctx.trace.iter().filter(|r| matches!(r.event, TraceEvent::FaultAction { .. })).filter_map(|r| r.node).collect();
    if acting.len() > ctx.meta.f {
        out.push(v(Check::FaultBudget, 0, None, None, format!("{} validators misbehaved, more than f", acting.len())));
    }
    if let Some(x) = acting.iter().find(|x| ctx.correct(**x)) {
        out.push(v(Check::FaultBudget, 0, Some(*x), None, "validator not declared faulty misbehaved".into()));
    }
    out
}
