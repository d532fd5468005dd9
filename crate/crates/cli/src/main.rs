use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use loopgas_cli::{config, parse_config, run, Verdict};

#[derive(Parser)]
#[command(name = "loopgas", version = loopgas_cli::VERSION, about = "Loop-gas experiments for multi-type Bose gases")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML configuration (see `loopgas schema`).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `sampler.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Free gas: kernel and window density against their series.
    FreeValidate(RunArgs),
    /// Interacting kernel F with its free reference Q.
    Kernel(RunArgs),
    /// Free reference kernel Q only.
    QKernel(RunArgs),
    /// Anchor densities in a window.
    Density(RunArgs),
    /// Multiplicity tail against the tightness bound.
    KTail(RunArgs),
    /// Window densities at two translated positions.
    ShiftInvariance(RunArgs),
    /// Bridge maximum law and Dirichlet trace.
    BridgeLaws(RunArgs),
    /// Theta series, bounds and constants.
    Analytic(RunArgs),
    /// Exact lattice partition functions and partial-trace compatibility.
    Oracle(RunArgs),
    /// Growth condition on external configurations.
    BCondition(RunArgs),
    /// Print the configuration schema.
    Schema,
}

fn execute(name: &str, a: &RunArgs) -> Result<Verdict> {
    let text = std::fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let mut cfg = parse_config(&text)?;
    if let Some(s) = a.seed {
        cfg.sampler.seed = s;
    }
    if let Some(o) = &a.out {
        cfg.output.dir = o.display().to_string();
    }
    let out = PathBuf::from(&cfg.output.dir);
    let summary = run(name, cfg, &out)?;
    for c in &summary.checks {
        println!("[{}] {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for n in &summary.notes {
        println!("note: {n}");
    }
    println!("{name}: verdict {:?}, {:.1}s, results in {}", summary.verdict, summary.wall_time_s, out.display());
    Ok(summary.verdict)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Schema => {
            print!("{}", config::SCHEMA);
            return ExitCode::SUCCESS;
        }
        Command::FreeValidate(a) => ("free-validate", a),
        Command::Kernel(a) => ("kernel", a),
        Command::QKernel(a) => ("q-kernel", a),
        Command::Density(a) => ("density", a),
        Command::KTail(a) => ("k-tail", a),
        Command::ShiftInvariance(a) => ("shift-invariance", a),
        Command::BridgeLaws(a) => ("bridge-laws", a),
        Command::Analytic(a) => ("analytic", a),
        Command::Oracle(a) => ("oracle", a),
        Command::BCondition(a) => ("b-condition", a),
    };
    match execute(name, args) {
        Ok(Verdict::Fail) => ExitCode::from(1),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
