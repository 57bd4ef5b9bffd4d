use thiserror::Error;

use crate::types::ValidatorId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("n = {n} validators cannot tolerate f = {f} faults (need n >= 3f + 1)")]
    TooManyFaults { n: usize, f: usize },
    #[error("validator {0} is outside the configured set")]
    UnknownValidator(ValidatorId),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("input ended after {0} bytes")]
    Truncated(usize),
    #[error("unknown tag {tag} for {what}")]
    BadTag { what: &'static str, tag: u8 },
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

/// Errors surfaced by protocol operations. Byzantine input never produces
/// these; it is dropped silently by the handlers.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("slot {0} is already finalized locally")]
    SlotAlreadyFinalized(u64),
    #[error("no slot available for this validator")]
    NoTicket,
    #[error("{0} broadcast instances already outstanding")]
    PacingLimit(usize),
    #[error("need {need} certificates from distinct validators, got {got}")]
    InsufficientQuorum { need: usize, got: usize },
    #[error("malformed ready certificate")]
    MalformedCertificate,
    #[error("salvage broadcast already started for this instance")]
    AlreadySalvaged,
    #[error("slot {0} below the start of the active rotation")]
    StalePolicy(u64),
    #[error("cannot remove the last active validator")]
    LastValidator,
}
