//! `finsler` — batch experiment runner for the Finsler geometry engine.
//!
//! Subcommands: `verify`, `dim-growth`, `transport`, `independence`. Each
//! writes `report.json` (full diagnostics, schema-versioned) and
//! `table.csv` into the output directory. Identical config and seed give
//! bit-identical outputs.
//!
//! Exit codes: 0 all checks pass, 1 a check failed, 2 config error.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Check(String),
}

#[derive(Parser)]
#[command(
    name = "finsler",
    about = "Finsler geometry experiments: identity verification, holonomy algebra growth, loop transport, independence ranks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the identity battery for the selected metrics
    Verify(CommonArgs),
    /// Rank-by-round growth of the restricted holonomy algebra
    #[command(name = "dim-growth")]
    DimGrowth(CommonArgs),
    /// Loop holonomy tables (θ_in, θ_out) for the configured loop
    Transport(CommonArgs),
    /// Gram ranks of the projective-factor function families
    Independence(CommonArgs),
}

#[derive(Args, Clone, Default)]
pub struct CommonArgs {
    /// JSON config file; flags override config fields one-to-one
    #[arg(long)]
    config: Option<PathBuf>,
    /// Metric id (repeatable); defaults to the whole catalog
    #[arg(long = "metric")]
    metrics: Vec<String>,
    /// Base point as "x1,x2" (repeatable)
    #[arg(long = "point")]
    points: Vec<String>,
    /// Seed for all stochastic sampling
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for report.json and table.csv
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sample count for residual sweeps
    #[arg(long)]
    samples: Option<usize>,
    /// Indicatrix grid size (even)
    #[arg(long)]
    grid: Option<usize>,
    /// Bracket/derivative closure depth
    #[arg(long = "depth-cap")]
    depth_cap: Option<usize>,
    /// Maximum number of retained fields
    #[arg(long = "field-cap")]
    field_cap: Option<usize>,
    /// RK4 step in curve parameter
    #[arg(long)]
    step: Option<f64>,
    /// Shrinking-loop sizes, comma separated
    #[arg(long)]
    epsilons: Option<String>,
    /// Chart dimension for the euclidean/klein/funk entries
    #[arg(long)]
    dimension: Option<usize>,
    /// Loop spec as inline JSON, e.g. '{"type":"circle","center":[0,0],"radius":0.3}'
    #[arg(long = "loop")]
    loop_spec: Option<String>,
    /// Radially project transported vectors back onto the indicatrix
    #[arg(long)]
    project: bool,
}

fn main() {
    let code = match run() {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("finsler: checks failed (see report.json)");
            1
        }
        Err(CliError::Check(msg)) => {
            eprintln!("finsler: check failure: {msg}");
            1
        }
        Err(CliError::Config(msg)) => {
            eprintln!("finsler: config error: {msg}");
            2
        }
    };
    std::process::exit(code);
}

fn run() -> Result<bool, CliError> {
    configure_threads()?;
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Verify(a) => ("verify", a),
        Command::DimGrowth(a) => ("dim-growth", a),
        Command::Transport(a) => ("transport", a),
        Command::Independence(a) => ("independence", a),
    };

    let file = config::load(args.config.as_ref())?;
    let resolved = config::Resolved::assemble(file, args)?;

    let (body, csv, pass) = match &cli.command {
        Command::Verify(_) => commands::verify(&resolved)?,
        Command::DimGrowth(_) => commands::dim_growth(&resolved)?,
        Command::Transport(_) => commands::transport(&resolved)?,
        Command::Independence(_) => commands::independence(&resolved)?,
    };

    let report = json!({
        "schema": 1,
        "command": name,
        "config": resolved,
        "pass": pass,
        "results": body,
    });

    std::fs::create_dir_all(&resolved.out)
        .map_err(|e| CliError::Config(format!("cannot create output dir: {e}")))?;
    let json_path = resolved.out.join("report.json");
    let mut text = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Config(format!("serialization: {e}")))?;
    text.push('\n');
    std::fs::write(&json_path, text)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", json_path.display())))?;
    let csv_path = resolved.out.join("table.csv");
    std::fs::write(&csv_path, csv)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", csv_path.display())))?;

    println!(
        "finsler {name}: {} → {}",
        if pass { "pass" } else { "FAIL" },
        resolved.out.display()
    );
    Ok(pass)
}

/// `FINSLER_THREADS` caps worker parallelism; absent means the hardware
/// default.
fn configure_threads() -> Result<(), CliError> {
    match std::env::var("FINSLER_THREADS") {
        Err(_) => Ok(()),
        Ok(raw) => {
            let n: usize = raw
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| {
                    CliError::Config(format!("FINSLER_THREADS must be a positive integer, got '{raw}'"))
                })?;
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Config(format!("thread pool: {e}")))
        }
    }
}
