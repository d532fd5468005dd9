//! `results.csv` rows and the `summary.json` document.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::ExperimentConfig;

/// Fixed column order of `results.csv`.
pub const CSV_COLUMNS: [&str; 7] = ["experiment", "quantity", "params", "value", "std_error", "n_samples", "seed"];

/// One estimate. `std_error` is NaN for exact values and carries the
/// certified truncation bound for series.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub quantity: String,
    pub params: String,
    pub value: f64,
    pub std_error: f64,
    pub n_samples: u64,
}

impl Row {
    pub fn new(quantity: &str, params: impl Into<String>, value: f64, std_error: f64, n_samples: u64) -> Self {
        Self { quantity: quantity.to_string(), params: params.into(), value, std_error, n_samples }
    }

    pub fn exact(quantity: &str, params: impl Into<String>, value: f64) -> Self {
        Self::new(quantity, params, value, f64::NAN, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), pass, detail: detail.into() }
    }
}

/// What an experiment hands back before anything is written.
#[derive(Clone, Debug, Default)]
pub struct Report {
    pub rows: Vec<Row>,
    pub checks: Vec<Check>,
    pub checkpoints: Vec<String>,
    pub notes: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    /// The experiment has no built-in threshold.
    None,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub version: String,
    pub experiment: String,
    pub seed: u64,
    pub wall_time_s: f64,
    pub verdict: Verdict,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    pub config: ExperimentConfig,
    /// Every field spelled out; `loopgas <experiment> --config` on this text reproduces the run.
    pub config_toml: String,
}

impl Summary {
    pub fn new(experiment: &str, cfg: &ExperimentConfig, wall_time_s: f64, r: &Report) -> Self {
        let verdict = if r.checks.is_empty() {
            Verdict::None
        } else if r.checks.iter().all(|c| c.pass) {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        Self {
            version: crate::VERSION.to_string(),
            experiment: experiment.to_string(),
            seed: cfg.sampler.seed,
            wall_time_s,
            verdict,
            checks: r.checks.clone(),
            notes: r.notes.clone(),
            config: cfg.clone(),
            config_toml: cfg.to_toml(),
        }
    }
}

pub fn write_csv(path: &Path, experiment: &str, seed: u64, rows: &[Row]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(CSV_COLUMNS)?;
    let seed = seed.to_string();
    for r in rows {
        w.write_record([
            experiment,
            &r.quantity,
            &r.params,
            &r.value.to_string(),
            &r.std_error.to_string(),
            &r.n_samples.to_string(),
            &seed,
        ])?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
