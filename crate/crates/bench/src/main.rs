use anyhow::{Context, Result};
use clap::Parser;
use ddi_bench::{run_experiment, EngineKind, Experiment};
use ddi_core::config::{KeyValues, TransportKind};
use std::fs::File;
use std::io::{self, BufWriter};
use std::path::PathBuf;
use toml::Value;

// glibc malloc made timings depend on what earlier runs left in the heap
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Runs a sweep of range query experiments and writes one CSV row per run.
#[derive(Debug, Parser)]
#[command(name = "ddi-bench", version)]
struct Args {
    /// Topology and index settings (grid, tree, routing, rng, cluster keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment file; its keys override --config.
    #[arg(long)]
    experiment: Option<PathBuf>,
    /// drqa, gi or ns
    #[arg(long, value_parser = parse_engine)]
    engine: Option<EngineKind>,
    /// CSV destination. Defaults to experiment.output, then stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds both the workload generator and the scheduler.
    #[arg(long)]
    seed: Option<u64>,
    /// loopback or socket; applies to the cluster backend
    #[arg(long, value_parser = parse_transport)]
    transport: Option<TransportKind>,
    /// JSONL event log to replay instead of a generated workload.
    #[arg(long)]
    workload: Option<PathBuf>,
}

fn parse_engine(s: &str) -> Result<EngineKind, String> {
    s.parse()
}

fn parse_transport(s: &str) -> Result<TransportKind, String> {
    s.parse()
}

fn load(args: &Args) -> Result<Experiment> {
    let mut kv = KeyValues::parse("")?;
    if let Some(p) = &args.config {
        kv.merge(&KeyValues::load(p)?);
    }
    if let Some(p) = &args.experiment {
        kv.merge(&KeyValues::load(p)?);
    }
    if let Some(e) = args.engine {
        kv.set("experiment.engine", Value::String(e.to_string()));
    }
    if let Some(s) = args.seed {
        let s = i64::try_from(s).context("--seed must fit in 63 bits")?;
        kv.set("rng.seed", Value::Integer(s));
        kv.set("workload.seed", Value::Integer(s));
    }
    if let Some(t) = args.transport {
        let name = match t {
            TransportKind::Loopback => "loopback",
            TransportKind::Socket => "socket",
        };
        kv.set("cluster.transport", Value::String(name.into()));
    }
    if let Some(p) = &args.workload {
        kv.set("workload.file", Value::String(p.display().to_string()));
    }
    Ok(Experiment::from_kv(&kv)?)
}

fn main() -> Result<()> {
    let args = Args::parse();
    let e = load(&args).context("invalid experiment")?;
    let stderr = io::stderr().lock();
    match args.out.as_ref().or(e.output.as_ref()) {
        Some(path) => {
            let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            run_experiment(&e, BufWriter::new(f), stderr)?;
        }
        None => {
            run_experiment(&e, io::stdout().lock(), stderr)?;
        }
    }
    Ok(())
}
