//! Scenario files and the end-to-end run used by the CLI and the tests.
//!
//! A scenario is a JSON object:
//!
//! ```json
//! {
//!   "name": "happy-path",
//!   "sim": { "n": 4, "f": 1, "delay": { "kind": "UNIFORM", "delay": 10000 }, "horizon": 2000000 },
//!   "workload": { "items": [ { "at": 0, "validator": 0 } ] },
//!   "checks": ["safety", "P5"]
//! }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checker::{self, Check, CheckOptions, UnknownCheck, Violation};
use crate::error::ConfigError;
use crate::ledger::{command_name, LogSnapshotEntry};
use crate::metrics::{self, Metrics};
use crate::sim::{self, Behavior, SimConfig, SimStats, Workload};
use crate::ticket::TicketPolicy;
use crate::trace::{TraceEvent, TraceRecord};
use crate::types::{Digest, SlotNumber, ValidatorId};

fn default_checks() -> Vec<String> {
    vec!["all".to_owned()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: Option<String>,
    pub sim: SimConfig,
    #[serde(default)]
    pub workload: Workload,
    /// Overrides `sim.policy` when present.
    #[serde(default)]
    pub policy: Option<TicketPolicy>,
    /// Check names, or the groups `all` and `safety`.
    #[serde(default = "default_checks")]
    pub checks: Vec<String>,
    /// Slack for eventually-properties; default 20·Δ.
    #[serde(default)]
    pub slack: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("reading {path}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Check(#[from] UnknownCheck),
}

impl Scenario {
    pub fn from_json(s: &str) -> Result<Self, ScenarioError> {
        let scn: Scenario = serde_json::from_str(s)?;
        scn.validate()?;
        Ok(scn)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    /// The simulator configuration with scenario-level overrides applied.
    pub fn config(&self) -> SimConfig {
        let mut cfg = self.sim.clone();
        if let Some(p) = &self.policy {
            cfg.policy = p.clone();
        }
        cfg
    }

    pub fn checks(&self) -> Result<Vec<Check>, UnknownCheck> {
        Check::parse_list(&self.checks.join(","))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let cfg = self.config();
        cfg.validate()?;
        self.checks()?;
        let late = |t: u64, what: &str| {
            if t > cfg.horizon {
                Err(ConfigError::Invalid(format!("{what} at {t} is beyond the horizon {}", cfg.horizon)))
            } else {
                Ok(())
            }
        };
        for item in &self.workload.items {
            if item.validator.index() >= cfg.n {
                return Err(ConfigError::UnknownValidator(item.validator).into());
            }
            late(item.at, "work item")?;
        }
        for g in &self.workload.generators {
            late(g.start, "generator start")?;
        }
        for f in &cfg.faults {
            match f.behavior {
                Behavior::Crash { at } | Behavior::SquatSlot { at, .. } => late(at, "fault")?,
                Behavior::Mute { from, .. } => late(from, "fault")?,
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSnapshot {
    pub node: ValidatorId,
    pub crashed: bool,
    pub faulty: bool,
    pub first_uncommitted: u64,
    pub log: Vec<LogSnapshotEntry>,
}

pub struct RunOutcome {
    pub trace: Vec<TraceRecord>,
    pub metrics: Metrics,
    pub violations: Vec<Violation>,
    pub snapshots: Vec<NodeSnapshot>,
    pub stats: SimStats,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    /// DAG as seen by the lowest-numbered correct, live node.
    pub fn dag_dot(&self) -> String {
        let viewer = self.snapshots.iter().find(|s| !s.crashed && !s.faulty).map(|s| s.node);
        dag_dot(&self.trace, viewer)
    }
}

/// Runs a scenario, optionally with a different seed and check list.
pub fn run(scn: &Scenario, seed: Option<u64>, checks: Option<&[Check]>) -> Result<RunOutcome, ScenarioError> {
    let mut cfg = scn.config();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let selected = match checks {
        Some(c) => c.to_vec(),
        None => scn.checks()?,
    };
    let out = sim::run_named(&cfg, &scn.workload, Some(&scn.name))?;
    let faulty = cfg.faulty();
    let snapshots = out
        .nodes
        .iter()
        .zip(&out.crashed)
        .map(|(n, crashed)| NodeSnapshot {
            node: n.id(),
            crashed: *crashed,
            faulty: faulty.contains(&n.id()),
            first_uncommitted: n.ledger().first_uncommitted(),
            log: n.ledger().snapshot(),
        })
        .collect();
    let violations = checker::check_trace(&out.trace, &selected, CheckOptions { slack: scn.slack })
        .expect("simulator traces always carry metadata");
    let metrics = metrics::compute(&out.trace);
    Ok(RunOutcome { trace: out.trace, metrics, violations, snapshots, stats: out.stats })
}

/// Graphviz rendering of the blocks one node delivered, with predecessor
/// edges. Slotless blocks are grey, blocks that carry consensus commands
/// are boxes, and holes appear as red points.
pub fn dag_dot(trace: &[TraceRecord], viewer: Option<ValidatorId>) -> String {
    let mut s = String::from("digraph dag {\n  rankdir=RL;\n  node [fontname=\"monospace\", fontsize=10];\n");
    let mut shown: BTreeSet<Digest> = BTreeSet::new();
    let mut holes: BTreeMap<u64, ()> = BTreeMap::new();
    for r in trace {
        if r.node != viewer {
            continue;
        }
        match &r.event {
            TraceEvent::BbcaDeliverCommit { sn, digest, block, .. } if shown.insert(*digest) => {
                let slot = match sn {
                    SlotNumber::Slot(x) => format!("s{x}"),
                    SlotNumber::Slotless => "slotless".to_owned(),
                };
                let cmd = command_name(&block.command);
                let shape = if cmd == "NONE" { "ellipse" } else { "box" };
                let fill = if sn.is_slotless() { ", style=filled, fillcolor=lightgrey" } else { "" };
                let _ = writeln!(
                    s,
                    "  \"{}\" [label=\"{} {}\\n{}\\n{}\", shape={shape}{fill}];",
                    digest.short(),
                    block.sender,
                    slot,
                    cmd,
                    digest.short()
                );
                for p in &block.predecessors {
                    let _ = writeln!(s, "  \"{}\" -> \"{}\";", digest.short(), p.digest.short());
                }
            }
            TraceEvent::Commit { slot, digest: None, .. } => {
                holes.insert(*slot, ());
            }
            _ => {}
        }
    }
    for slot in holes.keys() {
        let _ = writeln!(s, "  \"hole{slot}\" [label=\"HOLE s{slot}\", shape=point, color=red, xlabel=\"s{slot}\"];");
    }
    s.push_str("}\n");
    s
}
