//! Batch front-end: runs a dual-band experiment sweep and writes traces,
//! metrics, aggregates and plot data.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use dualband::experiment::{run_experiment, write_outputs, ExperimentSpec};

#[derive(Parser, Debug)]
#[command(name = "dualband", version, about = "Dual-band 6TiSCH experiment runner")]
struct Args {
    /// JSON experiment file; fields left out take their default values.
    #[arg(long, conflicts_with = "quick")]
    config: Option<PathBuf>,

    /// Desk-scale preset (sizes 10/20/40, five seeds, short setup and run).
    #[arg(long)]
    quick: bool,

    /// Comma-separated seeds, replacing those of the spec.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,

    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Worker threads (defaults to all cores).
    #[arg(long)]
    workers: Option<usize>,

    /// Reject band settings that differ from the reference channel count,
    /// slot duration and bitrate.
    #[arg(long)]
    strict_paper_mode: bool,
}

fn load_spec(args: &Args) -> Result<ExperimentSpec> {
    let mut spec = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentSpec::from_json(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None if args.quick => ExperimentSpec::quick(),
        None => ExperimentSpec::default(),
    };
    if let Some(seeds) = &args.seeds {
        spec.seeds = seeds.clone();
    }
    if args.out.is_some() {
        spec.out = args.out.clone();
    }
    if args.workers.is_some() {
        spec.workers = args.workers;
    }
    spec.strict_paper_mode |= args.strict_paper_mode;
    spec.validate()?;
    Ok(spec)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let spec = match load_spec(&args) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("configuration error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let out = spec.out.clone().unwrap_or_else(|| PathBuf::from("results"));
    let result = match run_experiment(&spec) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("configuration error: {e:#}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = write_outputs(&result, &out) {
        eprintln!("writing {}: {e}", out.display());
        return ExitCode::from(2);
    }

    println!("spec {}", result.spec_hash);
    let mut results: Vec<_> = result.results.iter().collect();
    results.sort_by_key(|r| r.case);
    for r in results {
        let m = &r.report;
        println!(
            "{:<10} seed {:>16} pdr 2.4={:.3} 868={:.3} comb={:.3} retries {}/{}/{}",
            r.case.name(),
            r.case.seed,
            m.band24.pdr,
            m.band868.pdr,
            m.combined.pdr,
            m.band24.total_retries,
            m.band868.total_retries,
            m.combined.total_retries
        );
    }
    for (case, err) in &result.failures {
        eprintln!("{} seed {} failed: {err}", case.name(), case.seed);
    }
    println!("wrote {}", out.display());
    if result.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}
