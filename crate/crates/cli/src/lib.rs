//! Configuration, orchestration and result files for the `loopgas` binary.

pub mod config;
pub mod experiments;
pub mod output;

use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};

pub use config::{parse_config, ExperimentConfig};
pub use output::{Check, Report, Row, Summary, Verdict};

pub const VERSION: &str = env!("LOOPGAS_VERSION");

/// Runs `experiment` on `cfg` and writes `results.csv`, `summary.json` and
/// any checkpoints into `out_dir`.
pub fn run(experiment: &str, mut cfg: ExperimentConfig, out_dir: &Path) -> Result<Summary> {
    if !config::EXPERIMENTS.contains(&experiment) {
        bail!("unknown experiment `{experiment}`");
    }
    match cfg.experiment.as_deref() {
        Some(e) if e != experiment => bail!("config selects experiment `{e}` but the subcommand is `{experiment}`"),
        _ => cfg.experiment = Some(experiment.to_string()),
    }
    let start = Instant::now();
    let report = experiments::dispatch(experiment, &cfg)?;
    let wall = start.elapsed().as_secs_f64();
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    output::write_csv(&out_dir.join("results.csv"), experiment, cfg.sampler.seed, &report.rows)?;
    if cfg.output.checkpoint {
        for (i, ck) in report.checkpoints.iter().enumerate() {
            let name = if i == 0 { "chain.ckpt".to_string() } else { format!("chain.{i}.ckpt") };
            std::fs::write(out_dir.join(&name), ck).with_context(|| format!("writing {name}"))?;
        }
    }
    let summary = Summary::new(experiment, &cfg, wall, &report);
    let json = serde_json::to_string_pretty(&summary)?;
    std::fs::write(out_dir.join("summary.json"), json + "\n").context("writing summary.json")?;
    Ok(summary)
}
