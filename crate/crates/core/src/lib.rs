//! Slot-numbered consistent broadcast with a fallback path, composed into a
//! replicated ledger and driven by a deterministic discrete-event simulator.

pub mod bbca;
pub mod checker;
pub mod crypto;
pub mod encoding;
pub mod error;
pub mod fallback;
pub mod ledger;
pub mod metrics;
pub mod node;
pub mod options;
pub mod scenario;
pub mod sim;
pub mod ticket;
pub mod trace;
pub mod types;
pub mod vrb;
