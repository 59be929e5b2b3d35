use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};

use monostore::checker::{check_trace, AnomalyOptions};
use monostore::coordination::{Choice, ReadStrategy, WriteStrategy};
use monostore::dsl::classify_text;
use monostore::metrics::{metrics, MetricsReport};
use monostore::scenario::{Overrides, Scenario};
use monostore::sim::GossipMode;
use monostore::trace::Trace;

const EXIT_USAGE: u8 = 1;
const EXIT_NON_MONOTONE: u8 = 2;
const EXIT_VIOLATION: u8 = 3;

#[derive(Parser)]
#[command(name = "monostore", version)]
#[command(about = "Run, sweep and audit replicated CRDT scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct RunOpts {
    /// Gossip payloads: full | delta
    #[arg(long)]
    gossip: Option<GossipMode>,

    /// Read strategy for coordinated reads, e.g. read_one, read_quorum:2, adaptive
    #[arg(long)]
    read: Option<Choice<ReadStrategy>>,

    /// Write strategy, e.g. write_one, write_all, adaptive
    #[arg(long)]
    write: Option<Choice<WriteStrategy>>,

    /// Keep every delta buffered instead of pruning acknowledged ones
    #[arg(long)]
    no_prune: bool,
}

impl RunOpts {
    fn overrides(&self, seed: Option<u64>) -> Overrides {
        Overrides {
            seed,
            gossip: self.gossip,
            write: self.write,
            read: self.read,
            prune: self.no_prune.then_some(false),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario, write its trace and print the metrics report
    Run {
        scenario: PathBuf,

        #[arg(long)]
        seed: Option<u64>,

        /// Trace output path; defaults to <out dir>/<scenario>-<seed>.jsonl
        #[arg(long)]
        trace: Option<PathBuf>,

        /// Directory for traces when --trace is absent
        #[arg(long, env = "MONOSTORE_OUT_DIR", default_value = "out")]
        out_dir: PathBuf,

        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run a scenario under seeds 0..N and aggregate the reports
    Sweep {
        scenario: PathBuf,

        #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
        seeds: u64,

        #[command(flatten)]
        opts: RunOpts,
    },
    /// Audit a trace file and print the verdict
    Check { trace: PathBuf },
    /// Classify a query as monotone or not and show its plan
    Classify {
        query: String,

        /// Coordinate monotone set- and count-valued queries too
        #[arg(long)]
        strict: bool,
    },
}

/// Errors that map to a specific exit code.
enum Failure {
    Usage(anyhow::Error),
    Violation(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run {
            scenario,
            seed,
            trace,
            out_dir,
            opts,
        } => run(&scenario, seed, trace, &out_dir, &opts),
        Command::Sweep { scenario, seeds, opts } => sweep(&scenario, seeds, &opts),
        Command::Check { trace } => check(&trace),
        Command::Classify { query, strict } => return classify(&query, !strict),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Violation(msg)) => {
            eprintln!("violation: {msg}");
            ExitCode::from(EXIT_VIOLATION)
        }
    }
}

fn load(path: &Path) -> anyhow::Result<Scenario> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Scenario::parse(&text).map_err(|e| anyhow!("{}: {e}", path.display()))
}

fn print_json(v: &impl serde::Serialize) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v).expect("reports serialize");
    // a closed pipe downstream is not our failure
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn verdict_problem(r: &MetricsReport) -> Option<String> {
    if !r.convergence {
        Some(format!("seed {}: replicas did not converge", r.seed))
    } else if r.monotone_violations > 0 {
        Some(format!("seed {}: {} monotone violations", r.seed, r.monotone_violations))
    } else {
        None
    }
}

fn run(
    path: &Path,
    seed: Option<u64>,
    trace_path: Option<PathBuf>,
    out_dir: &Path,
    opts: &RunOpts,
) -> Result<(), Failure> {
    let sc = load(path)?.with(&opts.overrides(seed));
    let out = sc.run().map_err(|e| anyhow!("seed {}: {e}", sc.config.seed))?;
    let trace_path = trace_path.unwrap_or_else(|| {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
        out_dir.join(format!("{stem}-{}.jsonl", sc.config.seed))
    });
    if let Some(dir) = trace_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(&trace_path, out.trace.to_jsonl()).with_context(|| format!("writing {}", trace_path.display()))?;
    eprintln!("trace: {}", trace_path.display());
    let report = metrics(&out.trace, AnomalyOptions::default()).map_err(|e| anyhow!(e))?;
    print_json(&report);
    match verdict_problem(&report) {
        Some(msg) => Err(Failure::Violation(msg)),
        None => Ok(()),
    }
}

fn stat(values: impl Iterator<Item = f64>) -> Value {
    let v: Vec<f64> = values.collect();
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    json!({"min": min, "mean": mean, "max": max})
}

fn sweep(path: &Path, seeds: u64, opts: &RunOpts) -> Result<(), Failure> {
    let base = load(path)?;
    let reports: Vec<MetricsReport> = (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let out = base
                .with(&opts.overrides(Some(seed)))
                .run()
                .map_err(|e| Failure::Usage(anyhow!("seed {seed}: {e}")))?;
            let report = metrics(&out.trace, AnomalyOptions::default())
                .map_err(|e| Failure::Usage(anyhow!("seed {seed}: {e}")))?;
            match verdict_problem(&report) {
                Some(msg) => Err(Failure::Violation(msg)),
                None => Ok(report),
            }
        })
        .collect::<Result<_, _>>()?;
    let field = |f: fn(&MetricsReport) -> f64| stat(reports.iter().map(f));
    let skipped = reports.iter().filter(|r| r.anomalies.is_none()).count();
    let summary = json!({
        "scenario": path.display().to_string(),
        "seeds": seeds,
        "gossip_mode": reports[0].gossip_mode,
        "total_bytes": field(|r| r.total_bytes as f64),
        "gossip_bytes": field(|r| r.gossip_bytes as f64),
        "anomalies": field(|r| r.anomalies.unwrap_or(0) as f64),
        "anomaly_total": reports.iter().filter_map(|r| r.anomalies).sum::<usize>(),
        "anomaly_search_skipped": skipped,
        "ready": field(|r| r.queries.ready as f64),
        "unknown": field(|r| r.queries.unknown as f64),
        "coordinated": field(|r| r.queries.coordinated as f64),
        "unavailable": field(|r| r.queries.unavailable as f64),
        "dropped": field(|r| r.messages.dropped as f64),
        "monotone_violations": 0,
        "convergence": true,
    });
    print_json(&summary);
    Ok(())
}

fn check(path: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let trace = Trace::parse(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    let verdict = check_trace(&trace, AnomalyOptions::default()).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    print_json(&verdict);
    if verdict.ok() {
        Ok(())
    } else {
        Err(Failure::Violation(verdict.details.join("; ")))
    }
}

fn classify(query: &str, stale_tolerant: bool) -> ExitCode {
    match classify_text(query, stale_tolerant) {
        Ok(c) => {
            print_json(&c);
            if c.class.is_monotone() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_NON_MONOTONE)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
