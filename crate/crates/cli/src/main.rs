use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use bbca_ledger::checker::{self, Check, CheckOptions, Violation};
use bbca_ledger::scenario::{self, RunOutcome, Scenario};
use bbca_ledger::trace::{self, TraceRecord};

/// Deterministic simulator and trace checker for slot-sequenced broadcast
/// and log replication.
#[derive(Parser)]
#[command(name = "bbca-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write its artifacts.
    Run {
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for trace.jsonl, metrics.json, log_snapshot.json and dag.dot.
        #[arg(long, env = "BBCA_SIM_OUT", default_value = "out")]
        out: PathBuf,
        /// Comma-separated check names, or the groups `all` and `safety`.
        #[arg(long)]
        checks: Option<String>,
    },
    /// Check a recorded trace.
    Check {
        trace: PathBuf,
        #[arg(long, default_value = "all")]
        checks: String,
        /// Slack for eventually-properties, in simulated microseconds.
        #[arg(long)]
        slack: Option<u64>,
    },
    /// Run one scenario over a range of seeds, in parallel.
    Sweep {
        scenario: PathBuf,
        /// Seed range `A..B` (B exclusive).
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        checks: Option<String>,
    },
}

/// Config problems exit 2; violations exit 1.
enum Failure {
    Config(anyhow::Error),
    Violations,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Run { scenario, seed, out, checks } => run(&scenario, seed, &out, checks.as_deref()),
        Cmd::Check { trace, checks, slack } => check(&trace, &checks, slack),
        Cmd::Sweep { scenario, seeds, checks } => sweep(&scenario, &seeds, checks.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violations) => ExitCode::from(1),
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load(path: &Path) -> anyhow::Result<Scenario> {
    Ok(Scenario::load(path)?)
}

fn parse_checks(list: Option<&str>) -> anyhow::Result<Option<Vec<Check>>> {
    list.map(|s| Check::parse_list(s).map_err(anyhow::Error::from)).transpose()
}

/// Prints the first violation with the trace record that witnesses it.
fn report(violations: &[Violation], trace: &[TraceRecord]) {
    println!("{} violation(s)", violations.len());
    for v in violations.iter().take(20) {
        println!("  {v}");
    }
    if let Some(rec) = violations.first().and_then(|v| v.record).and_then(|i| trace.get(i)) {
        match serde_json::to_string(rec) {
            Ok(json) => println!("counterexample: {json}"),
            Err(e) => eprintln!("cannot render counterexample: {e}"),
        }
    }
}

fn write_artifacts(out: &Path, res: &RunOutcome) -> anyhow::Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    trace::write_jsonl_file(&res.trace, &out.join("trace.jsonl")).context("writing trace.jsonl")?;
    std::fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&res.metrics)?)?;
    std::fs::write(out.join("log_snapshot.json"), serde_json::to_string_pretty(&res.snapshots)?)?;
    std::fs::write(out.join("dag.dot"), res.dag_dot())?;
    Ok(())
}

fn run(path: &Path, seed: Option<u64>, out: &Path, checks: Option<&str>) -> Result<(), Failure> {
    let scn = load(path)?;
    let checks = parse_checks(checks)?;
    let res = scenario::run(&scn, seed, checks.as_deref()).map_err(anyhow::Error::from)?;
    write_artifacts(out, &res)?;
    let m = &res.metrics;
    println!(
        "{}: committed {} blocks, {} holes, {} slotless, commit steps {:?}, artifacts in {}",
        scn.name,
        m.blocks_committed,
        m.hole_count,
        m.slotless_count,
        m.commit_steps,
        out.display()
    );
    if res.passed() {
        println!("all checks passed");
        Ok(())
    } else {
        report(&res.violations, &res.trace);
        Err(Failure::Violations)
    }
}

fn check(path: &Path, checks: &str, slack: Option<u64>) -> Result<(), Failure> {
    let checks = Check::parse_list(checks).map_err(anyhow::Error::from)?;
    let records = trace::read_jsonl_file(path).with_context(|| format!("reading {}", path.display()))?;
    let violations = checker::check_trace(&records, &checks, CheckOptions { slack }).map_err(anyhow::Error::from)?;
    if violations.is_empty() {
        println!("{} records, all {} checks passed", records.len(), checks.len());
        Ok(())
    } else {
        report(&violations, &records);
        Err(Failure::Violations)
    }
}

fn parse_range(s: &str) -> anyhow::Result<std::ops::Range<u64>> {
    let (a, b) = s.split_once("..").context("expected a seed range A..B")?;
    let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
    anyhow::ensure!(a < b, "empty seed range {s}");
    Ok(a..b)
}

fn sweep(path: &Path, seeds: &str, checks: Option<&str>) -> Result<(), Failure> {
    let scn = load(path)?;
    let checks = parse_checks(checks)?;
    let range = parse_range(seeds)?;
    let total = range.end - range.start;
    let results: Vec<(u64, Result<Vec<Violation>, String>)> = range
        .into_par_iter()
        .map(|seed| {
            let r = scenario::run(&scn, Some(seed), checks.as_deref()).map(|o| o.violations).map_err(|e| e.to_string());
            (seed, r)
        })
        .collect();
    let mut failing = 0;
    for (seed, r) in &results {
        match r {
            Ok(vs) if vs.is_empty() => {}
            Ok(vs) => {
                failing += 1;
                println!("seed {seed}: {} violation(s), first: {}", vs.len(), vs[0]);
            }
            Err(e) => return Err(Failure::Config(anyhow::anyhow!("seed {seed}: {e}"))),
        }
    }
    println!("{}: {total} seeds, {failing} failing", scn.name);
    if failing == 0 {
        Ok(())
    } else {
        Err(Failure::Violations)
    }
}
