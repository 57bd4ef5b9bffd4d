//! Deterministic discrete-event simulator.
//!
//! One event queue ordered by `(time, insertion counter)`, a seeded ChaCha
//! generator as the only source of randomness, and no wall-clock access.
//! All times are in microseconds.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::KeyRing;
use crate::encoding::signed;
use crate::error::ConfigError;
use crate::node::{Effect, Node, NodeEvent, NodeFaults, NodeInput, TimerKind};
use crate::options::ProtocolOptions;
use crate::ticket::TicketPolicy;
use crate::trace::{MsgSummary, RunMeta, TraceEvent, TraceRecord};
use crate::types::{Block, Command, InstanceId, ProtocolMessage, ProtocolParams, SlotNumber, ValidatorId, VrbPayload};

pub const MS: u64 = 1_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkDelay {
    pub from: ValidatorId,
    pub to: ValidatorId,
    pub delay: u64,
}

/// Post-GST one-way delay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DelayModel {
    Uniform {
        delay: u64,
    },
    /// Uniform integer in `[lo, hi]`, drawn per message.
    Range {
        lo: u64,
        hi: u64,
    },
    /// Fixed per-link delays; unlisted links use `default`.
    PerLink {
        default: u64,
        links: Vec<LinkDelay>,
    },
}

impl DelayModel {
    fn upper_bound(&self) -> u64 {
        match self {
            DelayModel::Uniform { delay } => *delay,
            DelayModel::Range { hi, .. } => *hi,
            DelayModel::PerLink { default, links } => {
                links.iter().map(|l| l.delay).chain(std::iter::once(*default)).max().unwrap_or(0)
            }
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        match self {
            DelayModel::Range { lo, hi } if lo > hi => {
                Err(ConfigError::Invalid(format!("delay range [{lo}, {hi}] is empty")))
            }
            _ if self.upper_bound() == 0 => Err(ConfigError::Invalid("delay upper bound must be positive".into())),
            _ => Ok(()),
        }
    }
}

/// Network behavior for messages sent before GST.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PreGst {
    /// Delay scaled by `factor`; with `jitter`, by a uniform factor in
    /// `[1, factor]` drawn per message.
    Multiplier {
        factor: u64,
        #[serde(default)]
        jitter: bool,
    },
    /// Held until GST, then delivered with the normal delay.
    DropUntilGst,
}

impl Default for PreGst {
    fn default() -> Self {
        PreGst::Multiplier { factor: 20, jitter: false }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquivocationMode {
    /// Two instances (consecutive local sequence numbers), one per half.
    #[default]
    TwoIds,
    /// One instance id with two different blocks, plus forged-looking but
    /// validly signed echo/ready votes of the attacker for each half.
    SameId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Behavior {
    Crash {
        at: u64,
    },
    /// Drops every outbound message in `[from, to)`.
    Mute {
        from: u64,
        to: u64,
    },
    /// Sends conflicting INITIATEs for one slot to disjoint halves. Without
    /// `sn`, the attacker's first own slot is used.
    EquivocateSlot {
        #[serde(default)]
        sn: Option<u64>,
        #[serde(default)]
        mode: EquivocationMode,
    },
    WithholdReady,
    /// At time `at`, broadcasts an INITIATE without a ticket for a slot it
    /// does not own, plus a salvage SEND for that slot with no yields.
    SquatSlot {
        #[serde(default)]
        sn: Option<u64>,
        #[serde(default)]
        at: u64,
    },
    StallLeader,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub target: ValidatorId,
    pub behavior: Behavior,
}

/// A block payload submitted to a validator at a given time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkItem {
    pub at: u64,
    pub validator: ValidatorId,
    #[serde(default = "default_payload_size")]
    pub size: usize,
}

fn default_payload_size() -> usize {
    32
}

/// Periodic submissions. `validator = None` feeds every validator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    #[serde(default)]
    pub validator: Option<ValidatorId>,
    pub interval: u64,
    #[serde(default)]
    pub start: u64,
    #[serde(default)]
    pub stop: Option<u64>,
    #[serde(default = "default_payload_size")]
    pub size: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workload {
    #[serde(default)]
    pub items: Vec<WorkItem>,
    #[serde(default)]
    pub generators: Vec<Generator>,
}

fn default_k() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub f: usize,
    /// Timer base. `None` means 8 × the post-GST delay upper bound.
    #[serde(default)]
    pub delta: Option<u64>,
    #[serde(default = "default_k")]
    pub k_outstanding: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub gst: u64,
    pub delay: DelayModel,
    #[serde(default)]
    pub pre_gst: PreGst,
    pub horizon: u64,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub options: ProtocolOptions,
    #[serde(default)]
    pub policy: TicketPolicy,
    /// Slots handed to specific validators regardless of policy.
    #[serde(default)]
    pub ticket_overrides: BTreeMap<u64, Vec<ValidatorId>>,
    /// Extra delay on every message a validator sends to others; models a
    /// correct but slow validator.
    #[serde(default)]
    pub outbound_extra: BTreeMap<ValidatorId, u64>,
    #[serde(default = "yes")]
    pub record_deliveries: bool,
}

impl SimConfig {
    /// A fault-free configuration with uniform delay.
    pub fn uniform(n: usize, f: usize, delay: u64, horizon: u64) -> Self {
        SimConfig {
            n,
            f,
            delta: None,
            k_outstanding: 1,
            seed: 0,
            gst: 0,
            delay: DelayModel::Uniform { delay },
            pre_gst: PreGst::default(),
            horizon,
            faults: Vec::new(),
            options: ProtocolOptions::default(),
            policy: TicketPolicy::RoundRobin,
            ticket_overrides: BTreeMap::new(),
            outbound_extra: BTreeMap::new(),
            record_deliveries: true,
        }
    }

    pub fn delta(&self) -> u64 {
        self.delta.unwrap_or_else(|| 8 * self.delay.upper_bound())
    }

    pub fn params(&self) -> Result<ProtocolParams, ConfigError> {
        ProtocolParams::new(self.n, self.f, self.delta(), self.k_outstanding)
    }

    pub fn faulty(&self) -> BTreeSet<ValidatorId> {
        self.faults.iter().map(|f| f.target).collect()
    }

    pub fn validate(&self) -> Result<ProtocolParams, ConfigError> {
        let params = self.params()?;
        self.delay.validate()?;
        if let PreGst::Multiplier { factor: 0, .. } = self.pre_gst {
            return Err(ConfigError::Invalid("pre-GST multiplier must be at least 1".into()));
        }
        let check = |v: ValidatorId| if params.contains(v) { Ok(()) } else { Err(ConfigError::UnknownValidator(v)) };
        if let DelayModel::PerLink { links, .. } = &self.delay {
            for l in links {
                check(l.from)?;
                check(l.to)?;
            }
        }
        for f in &self.faults {
            check(f.target)?;
        }
        for vs in self.ticket_overrides.values() {
            vs.iter().try_for_each(|v| check(*v))?;
        }
        self.outbound_extra.keys().try_for_each(|v| check(*v))?;
        let faulty = self.faulty().len();
        if faulty > self.f {
            return Err(ConfigError::Invalid(format!("{faulty} faulty validators exceed f = {}", self.f)));
        }
        Ok(params)
    }
}

/// Local sequence numbers used by squatting attackers, far above anything
/// an honest run reaches, so the attacker's own numbering is not disturbed.
const SQUAT_SEQ_BASE: u64 = 1 << 40;

#[derive(Clone, Debug)]
enum EvKind {
    Deliver { from: ValidatorId, to: ValidatorId, msg: Arc<ProtocolMessage>, depth: u32 },
    Timer { node: ValidatorId, timer: TimerKind, generation: u64 },
    Input { node: ValidatorId, input: NodeInput },
    Start { node: ValidatorId },
    Crash { node: ValidatorId },
    Squat { node: ValidatorId, sn: Option<u64> },
    Tick { generator: usize },
}

#[derive(Clone, Debug)]
struct Ev {
    at: u64,
    seq: u64,
    kind: EvKind,
}

impl PartialEq for Ev {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}
impl Eq for Ev {}
impl PartialOrd for Ev {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ev {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

#[derive(Default)]
struct Adversary {
    withhold_ready: bool,
    mutes: Vec<(u64, u64)>,
    equivocate: Option<(Option<u64>, EquivocationMode)>,
    /// Instances whose honest echo/ready the attacker must not send.
    suppress_votes: BTreeSet<InstanceId>,
    squats: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SimStats {
    pub events: u64,
    pub messages_sent: u64,
    pub end_time: u64,
}

pub struct SimOutput {
    pub trace: Vec<TraceRecord>,
    pub nodes: Vec<Node>,
    pub crashed: Vec<bool>,
    pub stats: SimStats,
}

pub struct Sim<'a> {
    cfg: &'a SimConfig,
    workload: &'a Workload,
    params: ProtocolParams,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<Ev>>,
    seq: u64,
    now: u64,
    nodes: Vec<Node>,
    crashed: Vec<bool>,
    faulty: BTreeSet<ValidatorId>,
    adversaries: BTreeMap<ValidatorId, Adversary>,
    timers: HashMap<(ValidatorId, TimerKind), u64>,
    timer_generation: u64,
    oracle_decided: BTreeSet<u64>,
    oracle_values: BTreeMap<u64, BTreeMap<ValidatorId, Option<crate::types::Digest>>>,
    submissions: u64,
    trace: Vec<TraceRecord>,
    stats: SimStats,
}

/// Runs one simulation to its horizon (or until no events remain).
pub fn run(cfg: &SimConfig, workload: &Workload) -> Result<SimOutput, ConfigError> {
    run_named(cfg, workload, None)
}

pub fn run_named(cfg: &SimConfig, workload: &Workload, scenario: Option<&str>) -> Result<SimOutput, ConfigError> {
    let mut sim = Sim::new(cfg, workload, scenario)?;
    sim.run_to_end();
    Ok(sim.finish())
}

impl<'a> Sim<'a> {
    pub fn new(cfg: &'a SimConfig, workload: &'a Workload, scenario: Option<&str>) -> Result<Self, ConfigError> {
        let params = cfg.validate()?;
        for item in &workload.items {
            if !params.contains(item.validator) {
                return Err(ConfigError::UnknownValidator(item.validator));
            }
        }
        for g in &workload.generators {
            if g.interval == 0 {
                return Err(ConfigError::Invalid("generator interval must be positive".into()));
            }
            if let Some(v) = g.validator.filter(|v| !params.contains(*v)) {
                return Err(ConfigError::UnknownValidator(v));
            }
        }
        let keys = KeyRing::generate(cfg.n, cfg.seed);
        let mut adversaries: BTreeMap<ValidatorId, Adversary> = BTreeMap::new();
        let mut stall = BTreeSet::new();
        for f in &cfg.faults {
            let adv = adversaries.entry(f.target).or_default();
            match &f.behavior {
                Behavior::WithholdReady => adv.withhold_ready = true,
                Behavior::Mute { from, to } => adv.mutes.push((*from, *to)),
                Behavior::EquivocateSlot { sn, mode } => adv.equivocate = Some((*sn, *mode)),
                Behavior::StallLeader => {
                    stall.insert(f.target);
                }
                Behavior::Crash { .. } | Behavior::SquatSlot { .. } => {}
            }
        }
        let nodes = params
            .validators()
            .map(|v| {
                Node::new(
                    params,
                    keys.clone(),
                    keys.signer(v),
                    &cfg.options,
                    cfg.policy.clone(),
                    cfg.ticket_overrides.clone(),
                    NodeFaults { stall_leader: stall.contains(&v) },
                )
            })
            .collect();
        let meta = RunMeta {
            n: cfg.n,
            f: cfg.f,
            delta: params.delta(),
            seed: cfg.seed,
            gst: cfg.gst,
            horizon: cfg.horizon,
            faulty: cfg.faulty().into_iter().collect(),
            policy: cfg.policy.clone(),
            mutant: cfg.options.mutant,
            oracle_consensus: cfg.options.oracle_consensus,
            contended_slots: cfg.ticket_overrides.iter().filter(|(_, v)| v.len() > 1).map(|(s, _)| *s).collect(),
            slow: cfg.outbound_extra.iter().filter(|(_, d)| **d > 0).map(|(v, _)| *v).collect(),
            scenario: scenario.map(str::to_owned),
        };
        let mut sim = Sim {
            cfg,
            workload,
            params,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            queue: BinaryHeap::new(),
            seq: 0,
            now: 0,
            nodes,
            crashed: vec![false; cfg.n],
            faulty: cfg.faulty(),
            adversaries,
            timers: HashMap::new(),
            timer_generation: 0,
            oracle_decided: BTreeSet::new(),
            oracle_values: BTreeMap::new(),
            submissions: 0,
            trace: Vec::new(),
            stats: SimStats::default(),
        };
        sim.record(None, TraceEvent::Meta(meta));
        for f in &cfg.faults {
            match f.behavior {
                Behavior::Crash { at } => sim.schedule(at, EvKind::Crash { node: f.target }),
                Behavior::SquatSlot { sn, at } => sim.schedule(at, EvKind::Squat { node: f.target, sn }),
                _ => {}
            }
        }
        for v in params.validators() {
            sim.schedule(0, EvKind::Start { node: v });
        }
        for item in &workload.items {
            let payload = sim.payload(item.validator, item.size);
            sim.schedule(item.at, EvKind::Input { node: item.validator, input: NodeInput::Submit(payload) });
        }
        for (i, g) in workload.generators.iter().enumerate() {
            sim.schedule(g.start, EvKind::Tick { generator: i });
        }
        Ok(sim)
    }

    fn schedule(&mut self, at: u64, kind: EvKind) {
        self.seq += 1;
        self.queue.push(Reverse(Ev { at, seq: self.seq, kind }));
    }

    fn record(&mut self, node: Option<ValidatorId>, event: TraceEvent) {
        self.trace.push(TraceRecord { time: self.now, node, event });
    }

    /// Unique, deterministic payload bytes.
    fn payload(&mut self, v: ValidatorId, size: usize) -> Vec<u8> {
        self.submissions += 1;
        let mut p = format!("{v}/{}", self.submissions).into_bytes();
        p.resize(size.max(p.len()), 0);
        p
    }

    pub fn run_to_end(&mut self) {
        while let Some(Reverse(ev)) = self.queue.pop() {
            if ev.at > self.cfg.horizon {
                break;
            }
            self.now = ev.at;
            self.stats.events += 1;
            self.step(ev.kind);
        }
        self.stats.end_time = self.now;
    }

    pub fn finish(self) -> SimOutput {
        SimOutput { trace: self.trace, nodes: self.nodes, crashed: self.crashed, stats: self.stats }
    }

    fn step(&mut self, kind: EvKind) {
        match kind {
            EvKind::Deliver { from, to, msg, depth } => {
                if self.crashed[to.index()] {
                    return;
                }
                if self.cfg.record_deliveries {
                    self.record(Some(to), TraceEvent::MsgDelivered { from, msg: MsgSummary::of(&msg), depth });
                }
                let msg = Arc::try_unwrap(msg).unwrap_or_else(|m| (*m).clone());
                self.feed(to, NodeInput::Message { from, msg }, depth);
            }
            EvKind::Timer { node, timer, generation } => {
                if self.timers.get(&(node, timer)) != Some(&generation) || self.crashed[node.index()] {
                    return;
                }
                self.timers.remove(&(node, timer));
                self.record(Some(node), TraceEvent::Timer { timer });
                self.feed(node, NodeInput::Timer(timer), 0);
            }
            EvKind::Input { node, input } => self.feed(node, input, 0),
            EvKind::Start { node } => {
                if !self.crashed[node.index()] {
                    let fx = self.nodes[node.index()].start();
                    self.apply(node, fx, 0);
                }
            }
            EvKind::Crash { node } => {
                if !self.crashed[node.index()] {
                    self.crashed[node.index()] = true;
                    self.record(Some(node), TraceEvent::FaultAction { action: "crash".into(), detail: String::new() });
                }
            }
            EvKind::Squat { node, sn } => self.squat(node, sn),
            EvKind::Tick { generator } => {
                let g = &self.workload.generators[generator];
                let targets: Vec<ValidatorId> = match g.validator {
                    Some(v) => vec![v],
                    None => self.params.validators().collect(),
                };
                let (size, interval, stop) = (g.size, g.interval, g.stop);
                for v in targets {
                    let payload = self.payload(v, size);
                    self.feed(v, NodeInput::Submit(payload), 0);
                }
                let next = self.now + interval;
                if stop.is_none_or(|s| next < s) && next <= self.cfg.horizon {
                    self.schedule(next, EvKind::Tick { generator });
                }
            }
        }
    }

    fn feed(&mut self, node: ValidatorId, input: NodeInput, depth: u32) {
        if self.crashed[node.index()] {
            return;
        }
        let fx = self.nodes[node.index()].handle(input);
        self.apply(node, fx, depth);
    }

    fn apply(&mut self, node: ValidatorId, fx: Vec<Effect>, depth: u32) {
        let fx = if self.adversaries.contains_key(&node) { self.adversary_filter(node, fx) } else { fx };
        for e in fx {
            match e {
                Effect::Send { to, msg } => self.send(node, Some(to), msg, depth + 1),
                Effect::Broadcast { msg } => self.send(node, None, msg, depth + 1),
                Effect::SetTimer { timer, after } => {
                    self.timer_generation += 1;
                    let generation = self.timer_generation;
                    self.timers.insert((node, timer), generation);
                    self.schedule(self.now + after, EvKind::Timer { node, timer, generation });
                }
                Effect::CancelTimer { timer } => {
                    self.timers.remove(&(node, timer));
                }
                Effect::Event(ev) => {
                    if let NodeEvent::VbcParticipate { slot, value, .. } = &ev {
                        self.oracle_hook(node, *slot, *value);
                    }
                    if let Some(t) = TraceEvent::from_node(ev, depth) {
                        self.record(Some(node), t);
                    }
                }
            }
        }
    }

    /// With the consensus double enabled, the decision is made once every
    /// correct validator participated: the lowest-id participant naming a
    /// block wins, else HOLE. It is delivered to everyone at once.
    fn oracle_hook(&mut self, node: ValidatorId, slot: u64, value: Option<crate::types::Digest>) {
        if !self.cfg.options.oracle_consensus || self.faulty.contains(&node) || self.oracle_decided.contains(&slot) {
            return;
        }
        let values = self.oracle_values.entry(slot).or_default();
        values.entry(node).or_insert(value);
        if values.len() < self.params.n() - self.faulty.len() {
            return;
        }
        let value = values.values().find_map(|v| *v);
        self.oracle_values.remove(&slot);
        self.oracle_decided.insert(slot);
        for v in self.params.validators() {
            self.schedule(self.now, EvKind::Input { node: v, input: NodeInput::Decision { slot, value } });
        }
    }

    fn arrival(&mut self, from: ValidatorId, to: ValidatorId) -> u64 {
        let base = match &self.cfg.delay {
            DelayModel::Uniform { delay } => *delay,
            DelayModel::Range { lo, hi } => self.rng.gen_range(*lo..=*hi),
            DelayModel::PerLink { default, links } => {
                links.iter().find(|l| l.from == from && l.to == to).map_or(*default, |l| l.delay)
            }
        };
        let extra = if from != to { self.cfg.outbound_extra.get(&from).copied().unwrap_or(0) } else { 0 };
        let d = base + extra;
        if self.now >= self.cfg.gst {
            return self.now + d;
        }
        // anything sent before GST arrives no later than GST plus the normal delay
        match self.cfg.pre_gst {
            PreGst::Multiplier { factor, jitter } => {
                let m = if jitter { self.rng.gen_range(1..=factor) } else { factor };
                (self.now + d * m).min(self.cfg.gst + d)
            }
            PreGst::DropUntilGst => self.cfg.gst + d,
        }
    }

    fn send(&mut self, from: ValidatorId, to: Option<ValidatorId>, msg: ProtocolMessage, depth: u32) {
        if let Some(adv) = self.adversaries.get(&from) {
            if adv.mutes.iter().any(|(a, b)| (*a..*b).contains(&self.now)) {
                let detail = format!("{:?}", MsgSummary::of(&msg).kind);
                self.record(Some(from), TraceEvent::FaultAction { action: "mute_drop".into(), detail });
                return;
            }
        }
        self.stats.messages_sent += 1;
        self.record(Some(from), TraceEvent::MsgSent { to, msg: MsgSummary::of(&msg), depth });
        let msg = Arc::new(msg);
        let targets: Vec<ValidatorId> = match to {
            Some(t) => vec![t],
            None => self.params.validators().collect(),
        };
        for t in targets {
            let at = self.arrival(from, t);
            self.schedule(at, EvKind::Deliver { from, to: t, msg: msg.clone(), depth });
        }
    }
}

impl Sim<'_> {
    fn fault_action(&mut self, node: ValidatorId, action: &str, detail: String) {
        self.record(Some(node), TraceEvent::FaultAction { action: action.into(), detail });
    }

    /// Rewrites the effects of a scripted faulty node.
    fn adversary_filter(&mut self, node: ValidatorId, fx: Vec<Effect>) -> Vec<Effect> {
        let mut out = Vec::with_capacity(fx.len());
        for e in fx {
            let msg = match &e {
                Effect::Send { msg, .. } | Effect::Broadcast { msg } => Some(msg),
                _ => None,
            };
            let adv = &self.adversaries[&node];
            match msg {
                Some(ProtocolMessage::Initiate { id, sn: SlotNumber::Slot(s), block, .. })
                    if adv.equivocate.is_some_and(|(target, _)| target.is_none_or(|t| t == *s)) =>
                {
                    let (_, mode) = adv.equivocate.expect("checked above");
                    let (id, s, block) = (*id, *s, block.clone());
                    self.adversaries.get_mut(&node).expect("adversary").equivocate = None;
                    out.extend(self.equivocate(node, id, s, block, mode, e));
                }
                Some(ProtocolMessage::Ready { id, .. }) if adv.withhold_ready => {
                    let detail = format!("{}:{}", id.sender, id.local_seq);
                    self.fault_action(node, "withhold_ready", detail);
                }
                Some(ProtocolMessage::Echo { id, .. } | ProtocolMessage::Ready { id, .. })
                    if adv.suppress_votes.contains(id) => {}
                _ => out.push(e),
            }
        }
        out
    }

    fn equivocate(
        &mut self,
        node: ValidatorId,
        id: InstanceId,
        s: u64,
        block: Arc<Block>,
        mode: EquivocationMode,
        original: Effect,
    ) -> Vec<Effect> {
        let Effect::Broadcast { msg: ProtocolMessage::Initiate { ticket, sig, .. } } = original else {
            return vec![original];
        };
        let sn = SlotNumber::Slot(s);
        let mut alt = (*block).clone();
        alt.payload.extend_from_slice(b"/conflicting");
        let alt = Arc::new(alt);
        let (da, db) = (block.digest(), alt.digest());
        let n = self.cfg.n;
        let (half_a, half_b): (Vec<ValidatorId>, Vec<ValidatorId>) =
            self.params.validators().partition(|v| v.index() < n / 2);
        let who = &mut self.nodes[node.index()];
        let id_b = match mode {
            EquivocationMode::TwoIds => InstanceId { sender: node, local_seq: who.bbca_mut().reserve_seq() },
            EquivocationMode::SameId => id,
        };
        let sig_b = who.sign(&signed::initiate(id_b, sn, &db));
        let mut out = Vec::new();
        for &to in &half_a {
            let msg = ProtocolMessage::Initiate { id, sn, block: block.clone(), ticket: ticket.clone(), sig };
            out.push(Effect::Send { to, msg });
        }
        for &to in &half_b {
            let msg =
                ProtocolMessage::Initiate { id: id_b, sn, block: alt.clone(), ticket: ticket.clone(), sig: sig_b };
            out.push(Effect::Send { to, msg });
        }
        if mode == EquivocationMode::SameId {
            for (audience, d) in [(&half_a, da), (&half_b, db)] {
                let echo = who.sign(&signed::echo(id, sn, &d));
                let ready = who.sign(&signed::ready(id, sn, &d));
                for &to in audience.iter() {
                    out.push(Effect::Send { to, msg: ProtocolMessage::Echo { id, sn, digest: d, sig: echo } });
                    out.push(Effect::Send { to, msg: ProtocolMessage::Ready { id, sn, digest: d, sig: ready } });
                }
            }
            self.adversaries.get_mut(&node).expect("adversary").suppress_votes.insert(id);
        }
        let detail = format!("slot {s}: {} vs {} ({mode:?})", da.short(), db.short());
        self.fault_action(node, "equivocate_slot", detail);
        out
    }

    fn squat(&mut self, node: ValidatorId, sn: Option<u64>) {
        if self.crashed[node.index()] {
            return;
        }
        let n = self.cfg.n as u64;
        let who = &self.nodes[node.index()];
        let fu = who.ledger().first_uncommitted();
        let s = sn.unwrap_or_else(|| {
            (fu..fu + 4 * n).find(|s| who.tickets().owner(*s).is_some_and(|o| o != node)).unwrap_or(fu)
        });
        let adv = self.adversaries.get_mut(&node).expect("adversary");
        adv.squats += 1;
        let id = InstanceId { sender: node, local_seq: SQUAT_SEQ_BASE + adv.squats };
        let slot = SlotNumber::Slot(s);
        let squat =
            Arc::new(Block { sender: node, command: Command::None, predecessors: vec![], payload: b"squat".to_vec() });
        let who = &mut self.nodes[node.index()];
        let sig = who.sign(&signed::initiate(id, slot, &squat.digest()));
        let salvage = Arc::new(Block {
            sender: node,
            command: Command::None,
            predecessors: vec![],
            payload: b"squat-salvage".to_vec(),
        });
        let vid = InstanceId { sender: node, local_seq: who.bbca_mut().reserve_seq() };
        let vsig = who.sign(&signed::vrb_send(vid, slot, &salvage.digest()));
        self.fault_action(node, "squat_slot", format!("slot {s}"));
        let fx = vec![
            Effect::Broadcast { msg: ProtocolMessage::Initiate { id, sn: slot, block: squat, ticket: None, sig } },
            Effect::Broadcast {
                msg: ProtocolMessage::VrbSend {
                    payload: VrbPayload { id: vid, sn: slot, block: salvage, yields: vec![] },
                    sig: vsig,
                },
            },
        ];
        for e in fx {
            if let Effect::Broadcast { msg } = e {
                self.send(node, None, msg, 1);
            }
        }
    }
}
