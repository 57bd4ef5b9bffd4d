//! Trace records: one JSON object per line, in simulated-time order.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::node::{NodeEvent, TimerKind};
use crate::options::Mutant;
use crate::ticket::TicketPolicy;
use crate::types::{Block, Digest, InstanceId, ProtocolMessage, ReadyCertificate, SlotNumber, ValidatorId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<ValidatorId>,
    #[serde(flatten)]
    pub event: TraceEvent,
}

/// Everything the checker needs to know about the run that produced a trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub n: usize,
    pub f: usize,
    pub delta: u64,
    pub seed: u64,
    pub gst: u64,
    pub horizon: u64,
    /// Validators with any scripted misbehavior (crash included).
    pub faulty: Vec<ValidatorId>,
    pub policy: TicketPolicy,
    pub mutant: Mutant,
    pub oracle_consensus: bool,
    /// Slots deliberately handed to more than one validator.
    pub contended_slots: Vec<u64>,
    /// Correct validators with extra outbound delay.
    #[serde(default)]
    pub slow: Vec<ValidatorId>,
    #[serde(default)]
    pub scenario: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MsgKind {
    Initiate,
    Echo,
    Ready,
    Yield,
    Checkpoint,
    Pull,
    BlockReply,
    VrbSend,
    VrbEcho,
    VrbReady,
    AdoptNote,
    TicketRequest,
    TicketGrant,
}

/// The identifying part of a message; bodies are not repeated in traces.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MsgSummary {
    pub kind: MsgKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<InstanceId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sn: Option<SlotNumber>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<Digest>,
}

impl MsgSummary {
    pub fn of(msg: &ProtocolMessage) -> Self {
        let kind = match msg {
            ProtocolMessage::Initiate { .. } => MsgKind::Initiate,
            ProtocolMessage::Echo { .. } => MsgKind::Echo,
            ProtocolMessage::Ready { .. } => MsgKind::Ready,
            ProtocolMessage::Yield { .. } => MsgKind::Yield,
            ProtocolMessage::Checkpoint { .. } => MsgKind::Checkpoint,
            ProtocolMessage::Pull { .. } => MsgKind::Pull,
            ProtocolMessage::BlockReply { .. } => MsgKind::BlockReply,
            ProtocolMessage::VrbSend { .. } => MsgKind::VrbSend,
            ProtocolMessage::VrbEcho { .. } => MsgKind::VrbEcho,
            ProtocolMessage::VrbReady { .. } => MsgKind::VrbReady,
            ProtocolMessage::AdoptNote { .. } => MsgKind::AdoptNote,
            ProtocolMessage::TicketRequest { .. } => MsgKind::TicketRequest,
            ProtocolMessage::TicketGrant { .. } => MsgKind::TicketGrant,
        };
        MsgSummary { kind, id: msg.instance(), sn: msg.slot(), digest: msg.digest() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TraceEvent {
    Meta(RunMeta),
    /// `to = None` is a broadcast. `depth` counts network hops since the
    /// last local trigger (timer or client input).
    MsgSent {
        to: Option<ValidatorId>,
        msg: MsgSummary,
        depth: u32,
    },
    MsgDelivered {
        from: ValidatorId,
        msg: MsgSummary,
        depth: u32,
    },
    Timer {
        timer: TimerKind,
    },
    BbcaDeliverCommit {
        id: InstanceId,
        sn: SlotNumber,
        digest: Digest,
        block: Arc<Block>,
        depth: u32,
    },
    BbcaAdopt {
        sn: u64,
        digest: Option<Digest>,
        cert: ReadyCertificate,
    },
    Final {
        digest: Digest,
        sn: SlotNumber,
    },
    /// A block commit (`digest` set) or a hole commit (`digest = None`).
    Commit {
        slot: u64,
        digest: Option<Digest>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        own_slot: Option<SlotNumber>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sender: Option<ValidatorId>,
        depth: u32,
    },
    VbcParticipate {
        slot: u64,
        value: Option<Digest>,
        certified: Vec<(ValidatorId, Option<Digest>)>,
    },
    VbcDecide {
        slot: u64,
        value: Option<Digest>,
    },
    TicketGrant {
        validator: ValidatorId,
        slot: u64,
        certifier: Option<ValidatorId>,
        /// Round-robin membership snapshot the grant was made under.
        #[serde(default)]
        snapshot: u64,
    },
    FaultAction {
        action: String,
        detail: String,
    },
}

impl TraceEvent {
    pub fn name(&self) -> &'static str {
        match self {
            TraceEvent::Meta(_) => "META",
            TraceEvent::MsgSent { .. } => "MSG_SENT",
            TraceEvent::MsgDelivered { .. } => "MSG_DELIVERED",
            TraceEvent::Timer { .. } => "TIMER",
            TraceEvent::BbcaDeliverCommit { .. } => "BBCA_DELIVER_COMMIT",
            TraceEvent::BbcaAdopt { .. } => "BBCA_ADOPT",
            TraceEvent::Final { .. } => "FINAL",
            TraceEvent::Commit { .. } => "COMMIT",
            TraceEvent::VbcParticipate { .. } => "VBC_PARTICIPATE",
            TraceEvent::VbcDecide { .. } => "VBC_DECIDE",
            TraceEvent::TicketGrant { .. } => "TICKET_GRANT",
            TraceEvent::FaultAction { .. } => "FAULT_ACTION",
        }
    }

    /// Converts a node event; `None` for events that are not traced.
    pub fn from_node(ev: NodeEvent, depth: u32) -> Option<Self> {
        Some(match ev {
            NodeEvent::BbcaDeliverCommit { id, sn, digest, block } => {
                TraceEvent::BbcaDeliverCommit { id, sn, digest, block, depth }
            }
            NodeEvent::BbcaAdopt { sn, digest, cert } => TraceEvent::BbcaAdopt { sn, digest, cert },
            NodeEvent::Final { digest, sn } => TraceEvent::Final { digest, sn },
            NodeEvent::Commit { digest, slot, own_slot, sender } => {
                TraceEvent::Commit { slot, digest: Some(digest), own_slot: Some(own_slot), sender: Some(sender), depth }
            }
            NodeEvent::SlotCommit { slot, digest: None, .. } => {
                TraceEvent::Commit { slot, digest: None, own_slot: None, sender: None, depth }
            }
            NodeEvent::SlotCommit { .. } => return None,
            NodeEvent::VbcParticipate { slot, value, certs } => TraceEvent::VbcParticipate {
                slot,
                value,
                certified: certs.into_iter().map(|(v, c)| (v, c.subject().map(|(_, _, d)| d))).collect(),
            },
            NodeEvent::VbcDecide { slot, value } => TraceEvent::VbcDecide { slot, value },
            NodeEvent::TicketGrant { validator, slot, certifier, snapshot } => {
                TraceEvent::TicketGrant { validator, slot, certifier, snapshot }
            }
            NodeEvent::Conflict { .. } => return None,
        })
    }
}

/// Finds the run metadata, which simulators write as the first record.
pub fn meta(trace: &[TraceRecord]) -> Option<&RunMeta> {
    trace.iter().find_map(|r| match &r.event {
        TraceEvent::Meta(m) => Some(m),
        _ => None,
    })
}

pub fn write_jsonl(trace: &[TraceRecord], mut w: impl Write) -> std::io::Result<()> {
    for r in trace {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_jsonl_file(trace: &[TraceRecord], path: &Path) -> std::io::Result<()> {
    let f = std::fs::File::create(path)?;
    write_jsonl(trace, std::io::BufWriter::new(f))
}

#[derive(Debug, thiserror::Error)]
pub enum TraceReadError {
    #[error("reading trace: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
}

pub fn read_jsonl(r: impl BufRead) -> Result<Vec<TraceRecord>, TraceReadError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| TraceReadError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

pub fn read_jsonl_file(path: &Path) -> Result<Vec<TraceRecord>, TraceReadError> {
    read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
}
