//! Identifiers, blocks, certificates and wire messages shared by every
//! protocol layer.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::crypto::Signature;
use crate::error::ConfigError;

/// Index of a validator in `[0, n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValidatorId(pub u32);

impl ValidatorId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ValidatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// Static protocol configuration. Construct through [`ProtocolParams::new`]
/// so that the `n >= 3f + 1` bound is always enforced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ProtocolParams {
    n: usize,
    f: usize,
    delta: u64,
    k_outstanding: usize,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    n: usize,
    f: usize,
    delta: u64,
    k_outstanding: usize,
}

impl TryFrom<RawParams> for ProtocolParams {
    type Error = ConfigError;
    fn try_from(raw: RawParams) -> Result<Self, ConfigError> {
        ProtocolParams::new(raw.n, raw.f, raw.delta, raw.k_outstanding)
    }
}

impl From<ProtocolParams> for RawParams {
    fn from(p: ProtocolParams) -> Self {
        RawParams { n: p.n, f: p.f, delta: p.delta, k_outstanding: p.k_outstanding }
    }
}

impl ProtocolParams {
    pub fn new(n: usize, f: usize, delta: u64, k_outstanding: usize) -> Result<Self, ConfigError> {
        if n < 3 * f + 1 {
            return Err(ConfigError::TooManyFaults { n, f });
        }
        if delta == 0 {
            return Err(ConfigError::Invalid("delta must be positive".into()));
        }
        if k_outstanding == 0 {
            return Err(ConfigError::Invalid("k_outstanding must be at least 1".into()));
        }
        Ok(ProtocolParams { n, f, delta, k_outstanding })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn f(&self) -> usize {
        self.f
    }
    /// Progress timeout, in simulated microseconds.
    pub fn delta(&self) -> u64 {
        self.delta
    }
    pub fn k_outstanding(&self) -> usize {
        self.k_outstanding
    }

    pub fn validators(&self) -> impl Iterator<Item = ValidatorId> {
        (0..self.n as u32).map(ValidatorId)
    }

    pub fn contains(&self, v: ValidatorId) -> bool {
        v.index() < self.n
    }
}

/// Size of a Byzantine quorum: any two such sets share a correct validator.
pub fn quorum_2f1(params: &ProtocolParams) -> usize {
    2 * params.f + 1
}

/// Smallest set guaranteed to contain a correct validator.
pub fn quorum_f1(params: &ProtocolParams) -> usize {
    params.f + 1
}

/// Broadcast instance label: the sender plus its per-sender counter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstanceId {
    pub sender: ValidatorId,
    pub local_seq: u64,
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.sender, self.local_seq)
    }
}

/// A log position, or the marker for blocks delivered without one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "Option<u64>", into = "Option<u64>")]
pub enum SlotNumber {
    Slot(u64),
    Slotless,
}

impl SlotNumber {
    pub fn as_slot(self) -> Option<u64> {
        match self {
            SlotNumber::Slot(s) => Some(s),
            SlotNumber::Slotless => None,
        }
    }
    pub fn is_slotless(self) -> bool {
        matches!(self, SlotNumber::Slotless)
    }
}

impl From<Option<u64>> for SlotNumber {
    fn from(v: Option<u64>) -> Self {
        v.map_or(SlotNumber::Slotless, SlotNumber::Slot)
    }
}

impl From<SlotNumber> for Option<u64> {
    fn from(v: SlotNumber) -> Self {
        v.as_slot()
    }
}

impl fmt::Display for SlotNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotNumber::Slot(s) => write!(f, "{s}"),
            SlotNumber::Slotless => f.write_str("slotless"),
        }
    }
}

/// SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.short())
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes.try_into().map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))?;
        Ok(Digest(arr))
    }
}

/// Causal reference: the slot the block was delivered with, and its hash.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockRef {
    pub slot: SlotNumber,
    pub digest: Digest,
}

/// Signed echo, the unit a ready certificate is made of.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EchoAttestation {
    pub validator: ValidatorId,
    pub instance: InstanceId,
    pub sn: SlotNumber,
    pub digest: Digest,
    pub sig: Signature,
}

/// The 2f+1 echoes that made a validator send READY; empty if it never did.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadyCertificate {
    pub entries: Vec<EchoAttestation>,
}

impl ReadyCertificate {
    pub fn empty() -> Self {
        ReadyCertificate::default()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(instance, sn, digest)` the certificate vouches for, when non-empty.
    pub fn subject(&self) -> Option<(InstanceId, SlotNumber, Digest)> {
        self.entries.first().map(|e| (e.instance, e.sn, e.digest))
    }

    /// Structural check without signatures: quorum size, distinct signers,
    /// agreement on the subject.
    pub fn is_well_formed(&self, params: &ProtocolParams) -> bool {
        if self.entries.is_empty() {
            return true;
        }
        let Some((id, sn, digest)) = self.subject() else { return true };
        let signers: BTreeSet<ValidatorId> = self.entries.iter().map(|e| e.validator).collect();
        signers.len() == self.entries.len()
            && signers.len() >= quorum_2f1(params)
            && signers.iter().all(|v| params.contains(*v))
            && self.entries.iter().all(|e| e.instance == id && e.sn == sn && e.digest == digest)
    }
}

/// Membership changes carried by committed blocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ControlCommand {
    /// Bring a removed validator back into the round-robin rotation.
    Readd { validator: ValidatorId },
    /// Hybrid ticketing: the validators assigned to `rotation`.
    Allocate { rotation: u64, validators: Vec<ValidatorId> },
}

/// Block metadata: at most one protocol duty per block.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Command {
    #[default]
    None,
    /// Complaint that `slot` stalled, with what this validator adopted.
    Finalize {
        slot: u64,
        adopted: Option<Digest>,
        cert: ReadyCertificate,
    },
    Proposal {
        view: u64,
        slot: u64,
        value: Option<Digest>,
    },
    Vote {
        view: u64,
        slot: u64,
    },
    Complaint {
        view: u64,
        slot: u64,
    },
    Control(ControlCommand),
}

impl Command {
    /// Slot whose fallback consensus this command belongs to, if any.
    pub fn consensus_slot(&self) -> Option<u64> {
        match self {
            Command::Finalize { slot, .. }
            | Command::Proposal { slot, .. }
            | Command::Vote { slot, .. }
            | Command::Complaint { slot, .. } => Some(*slot),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub sender: ValidatorId,
    pub command: Command,
    pub predecessors: Vec<BlockRef>,
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
}

impl Block {
    pub fn digest(&self) -> Digest {
        crate::encoding::hash_block(self)
    }

    /// No duplicate predecessor digests.
    pub fn has_unique_predecessors(&self) -> bool {
        let set: BTreeSet<Digest> = self.predecessors.iter().map(|r| r.digest).collect();
        set.len() == self.predecessors.len()
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }
    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

/// Slot reservation handed out by a ticketmaster process.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TicketGrant {
    pub validator: ValidatorId,
    pub slot: u64,
    pub certifier: ValidatorId,
    pub sig: Signature,
}

/// A YIELD as collected by an instance sender, kept verbatim for the
/// salvage broadcast.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedYield {
    pub from: ValidatorId,
    pub id: InstanceId,
    pub sn: SlotNumber,
    pub digest: Digest,
    pub cert: ReadyCertificate,
    pub sig: Signature,
}

/// Salvage payload re-broadcast through validated reliable broadcast.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VrbPayload {
    pub id: InstanceId,
    pub sn: SlotNumber,
    pub block: Arc<Block>,
    pub yields: Vec<SignedYield>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProtocolMessage {
    Initiate {
        id: InstanceId,
        sn: SlotNumber,
        block: Arc<Block>,
        ticket: Option<TicketGrant>,
        sig: Signature,
    },
    Echo {
        id: InstanceId,
        sn: SlotNumber,
        digest: Digest,
        sig: Signature,
    },
    Ready {
        id: InstanceId,
        sn: SlotNumber,
        digest: Digest,
        sig: Signature,
    },
    Yield {
        id: InstanceId,
        sn: SlotNumber,
        digest: Digest,
        cert: ReadyCertificate,
        sig: Signature,
    },
    Checkpoint {
        id: InstanceId,
        sn: SlotNumber,
        digest: Digest,
        sig: Signature,
    },
    Pull {
        id: InstanceId,
        digest: Digest,
    },
    /// Answer to a PULL: the full block.
    BlockReply {
        id: InstanceId,
        block: Arc<Block>,
    },
    VrbSend {
        payload: VrbPayload,
        sig: Signature,
    },
    VrbEcho {
        id: InstanceId,
        sn: SlotNumber,
        digest: Digest,
        sig: Signature,
    },
    VrbReady {
        id: InstanceId,
        sn: SlotNumber,
        digest: Digest,
        sig: Signature,
    },
    /// Announces what this node adopted on finalizing `sn`.
    AdoptNote {
        sn: u64,
        cert: ReadyCertificate,
        sig: Signature,
    },
    TicketRequest {
        validator: ValidatorId,
        epoch: u64,
    },
    TicketGrant {
        grant: TicketGrant,
    },
}

impl ProtocolMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            ProtocolMessage::Initiate { .. } => "INITIATE",
            ProtocolMessage::Echo { .. } => "ECHO",
            ProtocolMessage::Ready { .. } => "READY",
            ProtocolMessage::Yield { .. } => "YIELD",
            ProtocolMessage::Checkpoint { .. } => "CHECKPOINT",
            ProtocolMessage::Pull { .. } => "PULL",
            ProtocolMessage::BlockReply { .. } => "BLOCK_REPLY",
            ProtocolMessage::VrbSend { .. } => "VRB_SEND",
            ProtocolMessage::VrbEcho { .. } => "VRB_ECHO",
            ProtocolMessage::VrbReady { .. } => "VRB_READY",
            ProtocolMessage::AdoptNote { .. } => "ADOPT_NOTE",
            ProtocolMessage::TicketRequest { .. } => "TICKET_REQUEST",
            ProtocolMessage::TicketGrant { .. } => "TICKET_GRANT",
        }
    }

    /// Instance the message belongs to, for broadcast-layer messages.
    pub fn instance(&self) -> Option<InstanceId> {
        match self {
            ProtocolMessage::Initiate { id, .. }
            | ProtocolMessage::Echo { id, .. }
            | ProtocolMessage::Ready { id, .. }
            | ProtocolMessage::Yield { id, .. }
            | ProtocolMessage::Checkpoint { id, .. }
            | ProtocolMessage::Pull { id, .. }
            | ProtocolMessage::BlockReply { id, .. }
            | ProtocolMessage::VrbEcho { id, .. }
            | ProtocolMessage::VrbReady { id, .. } => Some(*id),
            ProtocolMessage::VrbSend { payload, .. } => Some(payload.id),
            ProtocolMessage::AdoptNote { .. }
            | ProtocolMessage::TicketRequest { .. }
            | ProtocolMessage::TicketGrant { .. } => None,
        }
    }

    pub fn slot(&self) -> Option<SlotNumber> {
        match self {
            ProtocolMessage::Initiate { sn, .. }
            | ProtocolMessage::Echo { sn, .. }
            | ProtocolMessage::Ready { sn, .. }
            | ProtocolMessage::Yield { sn, .. }
            | ProtocolMessage::Checkpoint { sn, .. }
            | ProtocolMessage::VrbEcho { sn, .. }
            | ProtocolMessage::VrbReady { sn, .. } => Some(*sn),
            ProtocolMessage::VrbSend { payload, .. } => Some(payload.sn),
            ProtocolMessage::AdoptNote { sn, .. } => Some(SlotNumber::Slot(*sn)),
            _ => None,
        }
    }

    pub fn digest(&self) -> Option<Digest> {
        match self {
            ProtocolMessage::Initiate { block, .. } | ProtocolMessage::BlockReply { block, .. } => Some(block.digest()),
            ProtocolMessage::Echo { digest, .. }
            | ProtocolMessage::Ready { digest, .. }
            | ProtocolMessage::Yield { digest, .. }
            | ProtocolMessage::Checkpoint { digest, .. }
            | ProtocolMessage::Pull { digest, .. }
            | ProtocolMessage::VrbEcho { digest, .. }
            | ProtocolMessage::VrbReady { digest, .. } => Some(*digest),
            ProtocolMessage::VrbSend { payload, .. } => Some(payload.block.digest()),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: usize, f: usize) -> ProtocolParams {
        ProtocolParams::new(n, f, 80, 2).unwrap()
    }

    #[test]
    fn quorum_sizes() {
        assert_eq!(quorum_2f1(&params(4, 1)), 3);
        assert_eq!(quorum_2f1(&params(7, 2)), 5);
        assert_eq!(quorum_2f1(&params(10, 3)), 7);
        assert_eq!(quorum_f1(&params(4, 1)), 2);
        assert_eq!(quorum_f1(&params(7, 2)), 3);
        assert_eq!(quorum_f1(&params(1, 0)), 1);
    }

    #[test]
    fn rejects_too_many_faults() {
        assert!(ProtocolParams::new(3, 1, 10, 1).is_err());
        assert!(ProtocolParams::new(6, 2, 10, 1).is_err());
        assert!(ProtocolParams::new(4, 1, 0, 1).is_err());
        assert!(ProtocolParams::new(4, 1, 10, 0).is_err());
        let json = r#"{"n":3,"f":1,"delta":10,"k_outstanding":1}"#;
        assert!(serde_json::from_str::<ProtocolParams>(json).is_err());
    }

    /// Any two (2f+1)-subsets of n = 3f+1 validators share at least f+1
    /// members, checked by enumerating every pair of subsets.
    #[test]
    fn quorum_intersection_exhaustive() {
        for f in 0..=2usize {
            let n = 3 * f + 1;
            let q = 2 * f + 1;
            let subsets: Vec<u32> = (0u32..(1 << n)).filter(|m| m.count_ones() as usize == q).collect();
            for a in &subsets {
                for b in &subsets {
                    assert!((a & b).count_ones() as usize > f, "n={n} {a:b} {b:b}");
                }
            }
        }
    }

    #[test]
    fn slotless_is_distinct_from_every_slot() {
        for s in [0u64, 1, u64::MAX] {
            assert_ne!(SlotNumber::Slot(s), SlotNumber::Slotless);
        }
        let json = serde_json::to_string(&SlotNumber::Slotless).unwrap();
        assert_eq!(json, "null");
        let back: SlotNumber = serde_json::from_str("7").unwrap();
        assert_eq!(back, SlotNumber::Slot(7));
    }
}
