//! One pass/fail line per acceptance criterion. Expected values are
//! computed here from the configuration, not read back from the code under
//! test.

use std::collections::{BTreeMap, BTreeSet};

use bbca_ledger::checker::{Check, Violation};
use bbca_ledger::options::Mutant;
use bbca_ledger::scenario::{self, Scenario};
use bbca_ledger::sim::*;
use bbca_ledger::trace::{MsgKind, TraceEvent, TraceRecord};
use bbca_ledger::types::{Digest, SlotNumber, ValidatorId};
use rayon::prelude::*;

struct Verdict {
    pass: bool,
    detail: String,
}

fn report(id: u32, name: &str, v: &Verdict) {
    println!("[{}] {id}. {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
}

fn scn(name: &str, sim: SimConfig, workload: Workload) -> Scenario {
    Scenario {
        name: name.into(),
        description: None,
        sim,
        workload,
        policy: None,
        checks: vec!["all".into()],
        slack: None,
    }
}

fn items(at: u64, who: &[u32]) -> Vec<WorkItem> {
    who.iter().map(|v| WorkItem { at, validator: ValidatorId(*v), size: 32 }).collect()
}

fn load(interval: u64, stop: u64) -> Workload {
    Workload {
        items: vec![],
        generators: vec![Generator { validator: None, interval, start: 0, stop: Some(stop), size: 32 }],
    }
}

fn by_check(vs: &[Violation]) -> BTreeMap<&'static str, usize> {
    let mut m = BTreeMap::new();
    for v in vs {
        *m.entry(v.check.name()).or_default() += 1;
    }
    m
}

fn correct(meta_faulty: &BTreeSet<ValidatorId>, r: &TraceRecord) -> Option<ValidatorId> {
    r.node.filter(|n| !meta_faulty.contains(n))
}

// ---- 1. happy path ----

fn happy_path() -> Verdict {
    let d = 10 * MS;
    let cfg = SimConfig::uniform(4, 1, d, 1_000 * MS);
    let s = scn("happy", cfg, Workload { items: items(0, &[0, 1, 2, 3]), generators: vec![] });
    let out = scenario::run(&s, None, None).unwrap();
    let expected = 3 * d;
    let blocks = &out.metrics.blocks;
    let bad: Vec<String> = blocks
        .iter()
        .filter(|b| b.latency != Some(expected) || b.steps != Some(3))
        .map(|b| format!("sn {} latency {:?} steps {:?}", b.sn, b.latency, b.steps))
        .collect();
    let pass = blocks.len() == 4 && bad.is_empty() && out.metrics.commit_steps == Some(3) && out.passed();
    Verdict {
        pass,
        detail: format!(
            "{} blocks, commit latency {}us (expected exactly {expected}us), commit_steps {:?}, violations {} {:?}",
            blocks.len(),
            out.metrics.commit_latency.max,
            out.metrics.commit_steps,
            out.violations.len(),
            bad
        ),
    }
}

// ---- 2. contention and slotless salvage ----

fn contention_run(seed: u64, mutant: bbca_ledger::options::Mutant) -> (Vec<Violation>, bool, String) {
    let mut cfg = SimConfig::uniform(4, 1, 10 * MS, 3_000 * MS);
    cfg.delay = DelayModel::Range { lo: MS, hi: 10 * MS };
    cfg.ticket_overrides.insert(0, vec![ValidatorId(1), ValidatorId(2)]);
    cfg.options.mutant = mutant;
    let s = scn("contention", cfg, Workload { items: items(0, &[1, 2]), generators: vec![] });
    let out = scenario::run(&s, Some(seed), None).unwrap();
    // the two contending blocks: the first INITIATE each contender sent for slot 0
    let mut contenders: BTreeMap<ValidatorId, Digest> = BTreeMap::new();
    for r in &out.trace {
        if let TraceEvent::MsgSent { msg, .. } = &r.event {
            if msg.kind == bbca_ledger::trace::MsgKind::Initiate && msg.sn == Some(SlotNumber::Slot(0)) {
                if let (Some(n), Some(d)) = (r.node, msg.digest) {
                    contenders.entry(n).or_insert(d);
                }
            }
        }
    }
    let mut slotted: BTreeSet<Digest> = BTreeSet::new();
    let mut slotless: BTreeSet<Digest> = BTreeSet::new();
    let mut committed: BTreeMap<ValidatorId, BTreeSet<Digest>> = BTreeMap::new();
    for r in &out.trace {
        match &r.event {
            TraceEvent::BbcaDeliverCommit { sn, digest, .. } if contenders.values().any(|d| d == digest) => {
                if sn.is_slotless() {
                    slotless.insert(*digest);
                } else {
                    slotted.insert(*digest);
                }
            }
            TraceEvent::Commit { digest: Some(d), .. } => {
                committed.entry(r.node.unwrap()).or_default().insert(*d);
            }
            _ => {}
        }
    }
    let all_committed = contenders.len() == 2
        && (0..4).all(|v| contenders.values().all(|d| committed.get(&ValidatorId(v)).is_some_and(|c| c.contains(d))));
    let shape_ok = slotted.len() <= 1 && slotted.len() + slotless.len() == 2 && slotted.is_disjoint(&slotless);
    let detail = format!("slotted {} slotless {} committed-everywhere {all_committed}", slotted.len(), slotless.len());
    (out.violations, shape_ok && all_committed, detail)
}

fn contention() -> Verdict {
    let runs: Vec<(u64, Vec<Violation>, bool, String)> = (0..1000u64)
        .into_par_iter()
        .map(|seed| {
            let (v, ok, d) = contention_run(seed, bbca_ledger::options::Mutant::None);
            (seed, v, ok, d)
        })
        .collect();
    let p34: usize = runs
        .iter()
        .map(|r| r.1.iter().filter(|v| matches!(v.check, Check::P3Consistency | Check::P4UniqueSequencing)).count())
        .sum();
    let other: usize = runs.iter().map(|r| r.1.len()).sum::<usize>() - p34;
    let salvaged = runs.iter().filter(|r| r.3.contains("slotted 1 slotless 1")).count();
    let bad: Vec<String> = runs.iter().filter(|r| !r.2).take(3).map(|r| format!("seed {}: {}", r.0, r.3)).collect();
    Verdict {
        pass: p34 == 0 && other == 0 && bad.is_empty(),
        detail: format!(
            "1000 seeds, P3/P4 violations {p34}, other violations {other}, one-slotted-one-slotless in {salvaged}, shape failures {:?}",
            bad
        ),
    }
}

// ---- 3. fallback finalization after a crash ----

fn crash_finalization() -> Verdict {
    let d = 10 * MS;
    let mut cfg = SimConfig::uniform(4, 1, d, 3_000 * MS);
    cfg.faults = vec![FaultSpec { target: ValidatorId(3), behavior: Behavior::Crash { at: 0 } }];
    let delta = cfg.delta();
    let s = scn("crash", cfg, load(20 * MS, 1_000 * MS));
    let out = scenario::run(&s, None, None).unwrap();
    let faulty: BTreeSet<ValidatorId> = [ValidatorId(3)].into();
    // the slot's timer may start once a node knows a higher slot; from then
    // it has Δ to time out and two views (Δ each) to decide
    let bound = delta + 2 * delta;
    let slot = 3;
    let mut first_higher: BTreeMap<ValidatorId, u64> = BTreeMap::new();
    let mut decided: BTreeMap<ValidatorId, (u64, Option<Digest>)> = BTreeMap::new();
    for r in &out.trace {
        let Some(n) = correct(&faulty, r) else { continue };
        match &r.event {
            TraceEvent::BbcaDeliverCommit { sn: SlotNumber::Slot(s), .. } if *s > slot => {
                first_higher.entry(n).or_insert(r.time);
            }
            TraceEvent::Commit { slot: s, digest, .. } if *s == slot => {
                decided.entry(n).or_insert((r.time, *digest));
            }
            _ => {}
        }
    }
    let mut worst = 0;
    let mut all_hole = true;
    for v in [0, 1, 2].map(ValidatorId) {
        match (first_higher.get(&v), decided.get(&v)) {
            (Some(a), Some((t, dg))) => {
                worst = worst.max(t - a);
                all_hole &= dg.is_none();
            }
            _ => all_hole = false,
        }
    }
    let logs: Vec<_> = out.snapshots.iter().filter(|s| !s.faulty).map(|s| &s.log).collect();
    let identical = logs.windows(2).all(|w| w[0] == w[1]);
    let progressed = out.snapshots.iter().filter(|s| !s.faulty).all(|s| s.first_uncommitted > slot + 1);
    Verdict {
        pass: all_hole && worst <= bound && identical && progressed && out.passed(),
        detail: format!(
            "slot {slot} HOLE at all correct nodes {all_hole}, worst time from first higher slot to commit {worst}us (bound {bound}us), logs identical {identical}, later slots committed {progressed}, violations {:?}",
            by_check(&out.violations)
        ),
    }
}

// ---- 4. adversarial fuzz ----

fn fuzz_config(seed: u64) -> Scenario {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f022);
    let n = if rng.gen_bool(0.5) { 4 } else { 7 };
    let f = (n - 1) / 3;
    let hi = rng.gen_range(2..=10) * MS;
    let lo = rng.gen_range(MS..=hi);
    let mut cfg = SimConfig::uniform(n, f, hi, 4_000 * MS);
    cfg.delay = DelayModel::Range { lo, hi };
    cfg.gst = rng.gen_range(0..=800) * MS;
    cfg.pre_gst = if rng.gen_bool(0.2) {
        PreGst::DropUntilGst
    } else {
        PreGst::Multiplier { factor: rng.gen_range(1..=20), jitter: rng.gen_bool(0.5) }
    };
    let mut targets: Vec<u32> = (0..n as u32).collect();
    for i in 0..f {
        let j = rng.gen_range(i..targets.len());
        targets.swap(i, j);
    }
    cfg.faults = targets[..f]
        .iter()
        .map(|t| {
            let behavior = match rng.gen_range(0..7) {
                0 => Behavior::Crash { at: rng.gen_range(0..=1_000) * MS },
                1 => {
                    let from = rng.gen_range(0..=800) * MS;
                    Behavior::Mute { from, to: from + rng.gen_range(50..=600) * MS }
                }
                2 => Behavior::EquivocateSlot { sn: None, mode: EquivocationMode::TwoIds },
                3 => Behavior::EquivocateSlot { sn: None, mode: EquivocationMode::SameId },
                4 => Behavior::WithholdReady,
                5 => Behavior::SquatSlot { sn: None, at: rng.gen_range(0..=800) * MS },
                _ => Behavior::StallLeader,
            };
            FaultSpec { target: ValidatorId(*t), behavior }
        })
        .collect();
    let interval = rng.gen_range(15..=60) * MS;
    cfg.seed = seed;
    let slack = growth_slack(n, f, cfg.delta());
    cfg.horizon = cfg.horizon.max(2_000 * MS + slack);
    let mut s = scn(&format!("fuzz-{seed}"), cfg, load(interval, 1_500 * MS));
    s.slack = Some(slack);
    s
}

/// Time for the commit front to drain the holes Byzantine owners can leave
/// ahead of a proposal: each of the f owners may hole every slot it was
/// granted in the open half window before its suspension lands, and a hole
/// costs the commit timer, the instance timer and up to f stalled views.
fn growth_slack(n: usize, f: usize, delta: u64) -> u64 {
    let lookahead = 16 * n as u64;
    let holes = (f as u64) * (lookahead / 2).div_ceil(n as u64);
    let per_hole = 2 + (f * (f + 1) / 2) as u64;
    holes * per_hole * delta
}

fn fuzz() -> Verdict {
    let runs: Vec<(u64, Vec<Violation>)> = (0..1000u64)
        .into_par_iter()
        .map(|seed| {
            let s = fuzz_config(seed);
            (seed, scenario::run(&s, None, Some(&Check::ALL)).unwrap().violations)
        })
        .collect();
    let mut total: BTreeMap<&str, usize> = BTreeMap::new();
    let mut failing = Vec::new();
    for (seed, vs) in &runs {
        for (k, c) in by_check(vs) {
            *total.entry(k).or_default() += c;
        }
        if !vs.is_empty() {
            failing.push(*seed);
        }
    }
    Verdict {
        pass: failing.is_empty(),
        detail: format!(
            "1000 runs (n in {{4, 7}}, f Byzantine each, GST up to 800ms), failing runs {} {:?}, violations by check {:?}",
            failing.len(),
            &failing[..failing.len().min(10)],
            total
        ),
    }
}

// ---- 5. finalization soundness ----

/// One validator crashes early and pre-GST delays exceed the instance timer,
/// so many slots finalize with every correct adopt empty while their
/// INITIATEs are still in flight.
fn p8_config(seed: u64) -> Scenario {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xad07);
    let mut cfg = SimConfig::uniform(4, 1, 10 * MS, 2_500 * MS);
    cfg.delay = DelayModel::Range { lo: 2 * MS, hi: 10 * MS };
    cfg.gst = rng.gen_range(400..=800) * MS;
    cfg.pre_gst = PreGst::Multiplier { factor: rng.gen_range(12..=24), jitter: true };
    let target = rng.gen_range(0..4u32);
    cfg.faults =
        vec![FaultSpec { target: ValidatorId(target), behavior: Behavior::Crash { at: rng.gen_range(0..=100) * MS } }];
    cfg.seed = seed;
    scn(&format!("p8-{seed}"), cfg, load(20 * MS, 1_000 * MS))
}

/// Slots for which 2f+1 empty adopts were gathered: by correct nodes'
/// own adopts, or inside one correct node's consensus participation.
fn empty_quorum_slots(trace: &[TraceRecord], f: usize, faulty: &BTreeSet<ValidatorId>) -> BTreeSet<u64> {
    let mut empties: BTreeMap<u64, BTreeSet<ValidatorId>> = BTreeMap::new();
    let mut out = BTreeSet::new();
    for r in trace {
        let Some(n) = correct(faulty, r) else { continue };
        match &r.event {
            TraceEvent::BbcaAdopt { sn, digest: None, .. } => {
                empties.entry(*sn).or_default().insert(n);
            }
            TraceEvent::VbcParticipate { slot, certified, .. }
                if certified.iter().filter(|(_, c)| c.is_none()).count() > 2 * f =>
            {
                out.insert(*slot);
            }
            _ => {}
        }
    }
    out.extend(empties.into_iter().filter(|(_, s)| s.len() > 2 * f).map(|(sn, _)| sn));
    out
}

fn finalization_soundness() -> Verdict {
    let runs: Vec<(usize, usize, Vec<String>)> = (0..200u64)
        .into_par_iter()
        .map(|seed| {
            let out = scenario::run(&p8_config(seed), None, Some(&[Check::P8Finalization])).unwrap();
            let meta = bbca_ledger::trace::meta(&out.trace).unwrap();
            let faulty: BTreeSet<ValidatorId> = meta.faulty.iter().copied().collect();
            let slots = empty_quorum_slots(&out.trace, meta.f, &faulty);
            // slots whose block got at least one correct ECHO: a certificate was in play
            let mut echoed = BTreeSet::new();
            let mut bad = Vec::new();
            for r in &out.trace {
                let Some(n) = correct(&faulty, r) else { continue };
                match &r.event {
                    TraceEvent::MsgSent { msg, .. } if msg.kind == MsgKind::Echo => {
                        if let Some(SlotNumber::Slot(s)) = msg.sn {
                            echoed.insert(s);
                        }
                    }
                    TraceEvent::BbcaDeliverCommit { sn: SlotNumber::Slot(s), .. } if slots.contains(s) => {
                        bad.push(format!("seed {} node {n} slot {s}", meta.seed));
                    }
                    _ => {}
                }
            }
            bad.extend(out.violations.iter().map(|v| v.to_string()));
            (slots.len(), slots.intersection(&echoed).count(), bad)
        })
        .collect();
    let targeted = runs.iter().filter(|r| r.0 > 0).count();
    let slots: usize = runs.iter().map(|r| r.0).sum();
    let contested: usize = runs.iter().map(|r| r.1).sum();
    let bad: Vec<&String> = runs.iter().flat_map(|r| &r.2).collect();
    Verdict {
        pass: bad.is_empty() && targeted == runs.len() && contested > 0,
        detail: format!(
            "200 seeds, runs with an empty adopt quorum {targeted}, such slots {slots} ({contested} with a correct ECHO), slotted deliveries there {} {:?}",
            bad.len(),
            &bad[..bad.len().min(3)]
        ),
    }
}

// ---- 6. oracle differential ----

fn differential_config(seed: u64, oracle: bool) -> Scenario {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x0dac1e);
    let n = if rng.gen_bool(0.5) { 4 } else { 7 };
    let f = (n - 1) / 3;
    let mut cfg = SimConfig::uniform(n, f, 10 * MS, 2_500 * MS);
    cfg.delay = DelayModel::Range { lo: 2 * MS, hi: 10 * MS };
    cfg.gst = rng.gen_range(0..=400) * MS;
    cfg.pre_gst = PreGst::Multiplier { factor: rng.gen_range(1..=10), jitter: true };
    cfg.faults = (0..f as u32)
        .map(|i| {
            let behavior = match rng.gen_range(0..3) {
                0 => Behavior::Crash { at: rng.gen_range(0..=500) * MS },
                1 => Behavior::WithholdReady,
                _ => Behavior::StallLeader,
            };
            FaultSpec { target: ValidatorId(n as u32 - 1 - i), behavior }
        })
        .collect();
    cfg.options.oracle_consensus = oracle;
    cfg.seed = seed;
    scn(&format!("differential-{seed}-{oracle}"), cfg, load(25 * MS, 1_200 * MS))
}

/// Per slot: whether correct nodes decided a block (`true`) or a hole.
fn decisions(trace: &[TraceRecord]) -> BTreeMap<u64, BTreeSet<bool>> {
    let faulty: BTreeSet<ValidatorId> = bbca_ledger::trace::meta(trace).unwrap().faulty.iter().copied().collect();
    let mut m: BTreeMap<u64, BTreeSet<bool>> = BTreeMap::new();
    for r in trace {
        if let (Some(_), TraceEvent::VbcDecide { slot, value }) = (correct(&faulty, r), &r.event) {
            m.entry(*slot).or_default().insert(value.is_some());
        }
    }
    m
}

/// Slots decided for a block that no correct participation had certified:
/// the certificate reached the deciding proposal after participation.
fn late_certified(trace: &[TraceRecord]) -> BTreeSet<u64> {
    let faulty: BTreeSet<ValidatorId> = bbca_ledger::trace::meta(trace).unwrap().faulty.iter().copied().collect();
    let mut certified: BTreeMap<u64, BTreeSet<Digest>> = BTreeMap::new();
    let mut decided: BTreeMap<u64, Digest> = BTreeMap::new();
    for r in trace {
        match (correct(&faulty, r), &r.event) {
            (Some(_), TraceEvent::VbcParticipate { slot, certified: c, .. }) => {
                certified.entry(*slot).or_default().extend(c.iter().filter_map(|(_, d)| *d));
            }
            (Some(_), TraceEvent::VbcDecide { slot, value: Some(d) }) => {
                decided.insert(*slot, *d);
            }
            _ => {}
        }
    }
    decided.into_iter().filter(|(s, d)| !certified.get(s).is_some_and(|c| c.contains(d))).map(|(s, _)| s).collect()
}

fn oracle_differential() -> Verdict {
    let runs: Vec<(usize, Vec<String>, Vec<String>)> = (0..500u64)
        .into_par_iter()
        .map(|seed| {
            let a = scenario::run(&differential_config(seed, false), None, Some(&Check::SAFETY)).unwrap();
            let b = scenario::run(&differential_config(seed, true), None, Some(&Check::SAFETY)).unwrap();
            let (da, db) = (decisions(&a.trace), decisions(&b.trace));
            let late = late_certified(&a.trace);
            let mut both = 0;
            let mut diff = Vec::new();
            for (slot, va) in &da {
                let Some(vb) = db.get(slot) else { continue };
                both += 1;
                if va.len() != 1 || va != vb {
                    let why = if late.contains(slot) { "late certificate" } else { "other" };
                    diff.push(format!("seed {seed} slot {slot}: fallback {va:?} oracle {vb:?} ({why})"));
                }
            }
            let unsafe_: Vec<String> =
                a.violations.iter().chain(&b.violations).map(|v| format!("seed {seed}: {v}")).collect();
            (both, diff, unsafe_)
        })
        .collect();
    let compared: usize = runs.iter().map(|r| r.0).sum();
    let diff: Vec<&String> = runs.iter().flat_map(|r| &r.1).collect();
    let unsafe_: Vec<&String> = runs.iter().flat_map(|r| &r.2).collect();
    Verdict {
        pass: diff.is_empty() && unsafe_.is_empty() && compared > 0,
        detail: format!(
            "500 seeds x 2, slots decided in both {compared}, block/HOLE mismatches {} {:?}, safety violations {} {:?}",
            diff.len(),
            &diff[..diff.len().min(3)],
            unsafe_.len(),
            &unsafe_[..unsafe_.len().min(3)]
        ),
    }
}

// ---- 7. mutation sensitivity ----

fn mutant_scenario(mutant: Mutant, seed: u64) -> Vec<Violation> {
    match mutant {
        Mutant::NoSeqnoGate => contention_run(seed, mutant).0,
        Mutant::WeakReadyQuorum => {
            let mut cfg = SimConfig::uniform(4, 1, 10 * MS, 1_500 * MS);
            cfg.delay = DelayModel::Range { lo: MS, hi: 10 * MS };
            let behavior = Behavior::EquivocateSlot { sn: None, mode: EquivocationMode::SameId };
            cfg.faults = vec![FaultSpec { target: ValidatorId(3), behavior }];
            cfg.options.mutant = mutant;
            cfg.seed = seed;
            scenario::run(&scn("weak-ready", cfg, load(25 * MS, 800 * MS)), None, None).unwrap().violations
        }
        _ => {
            let mut s = p8_config(seed);
            s.sim.options.mutant = mutant;
            scenario::run(&s, None, None).unwrap().violations
        }
    }
}

fn mutation_sensitivity() -> Verdict {
    let cases = [
        (Mutant::NoSeqnoGate, Check::P4UniqueSequencing),
        (Mutant::WeakReadyQuorum, Check::P3Consistency),
        (Mutant::NoValidityGate, Check::DecisionForcing),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (mutant, expect) in cases {
        let hit = (0..200u64)
            .into_par_iter()
            .find_first(|seed| mutant_scenario(mutant, *seed).iter().any(|v| v.check == expect));
        pass &= hit.is_some();
        parts.push(format!("{mutant:?} -> {expect}: first flagged at seed {hit:?}"));
    }
    Verdict { pass, detail: format!("200 seeds per mutant; {}", parts.join("; ")) }
}

// ---- 8. throughput utility ----

fn throughput_utility() -> Verdict {
    let (n, d) = (4usize, 10 * MS);
    let slow = ValidatorId(3);
    let mut cfg = SimConfig::uniform(n, 1, d, 4_000 * MS);
    // far beyond the commit timer, so the slow validator's slots time out
    cfg.outbound_extra.insert(slow, 4 * cfg.delta());
    let s = scn("slow-validator", cfg, load(20 * MS, 2_000 * MS));
    let out = scenario::run(&s, None, None).unwrap();
    let meta = bbca_ledger::trace::meta(&out.trace).unwrap();
    let faulty: BTreeSet<ValidatorId> = meta.faulty.iter().copied().collect();
    let half_window = 16 * n as u64 / 2;

    let mut holes: BTreeSet<u64> = BTreeSet::new();
    let mut delivered: BTreeMap<ValidatorId, BTreeSet<Digest>> = BTreeMap::new();
    let mut committed: BTreeMap<ValidatorId, BTreeSet<Digest>> = BTreeMap::new();
    for r in &out.trace {
        let Some(node) = correct(&faulty, r) else { continue };
        match &r.event {
            TraceEvent::Commit { slot, digest: None, .. } => {
                holes.insert(*slot);
            }
            TraceEvent::Commit { digest: Some(dg), .. } => {
                committed.entry(node).or_default().insert(*dg);
            }
            TraceEvent::BbcaDeliverCommit { digest, .. } => {
                delivered.entry(node).or_default().insert(*digest);
            }
            _ => {}
        }
    }
    // the first hole of the slow validator's round-robin slot triggers the
    // adjustment, effective at the next slot
    let first = holes.iter().copied().find(|s| s % n as u64 == slow.0 as u64);
    let window = first.map(|s| (s + 1, s + 1 + half_window));
    let in_window = window.map_or(0, |(a, b)| holes.range(a..b).count());
    let mut mismatched = Vec::new();
    for (node, del) in &delivered {
        let com = committed.get(node).cloned().unwrap_or_default();
        if !del.is_subset(&com) || del.len() != com.len() {
            mismatched.push(format!("{node}: delivered {} committed {}", del.len(), com.len()));
        }
    }
    let total: usize = delivered.values().map(|s| s.len()).max().unwrap_or(0);
    Verdict {
        pass: window.is_some() && in_window == 0 && mismatched.is_empty() && out.violations.is_empty(),
        detail: format!(
            "adjustment window {window:?}, holes there {in_window}, holes overall {}, delivered blocks per node {total}, delivered/committed mismatches {mismatched:?}, violations {}",
            holes.len(),
            out.violations.len()
        ),
    }
}

type Criterion = (u32, &'static str, fn() -> Verdict);

#[test]
fn acceptance() {
    let criteria: Vec<Criterion> = vec![
        (1, "happy-path latency", happy_path),
        (2, "contention and slotless salvage", contention),
        (3, "fallback finalization after a crash", crash_finalization),
        (4, "property suite under adversarial fuzz", fuzz),
        (5, "finalization soundness", finalization_soundness),
        (6, "oracle differential", oracle_differential),
        (7, "mutation sensitivity", mutation_sensitivity),
        (8, "throughput utility", throughput_utility),
    ];
    // ACCEPTANCE_ONLY=5,6 runs a subset
    let only: Option<Vec<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let v = f();
        report(id, name, &v);
        if !v.pass {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
