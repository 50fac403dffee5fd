//! Experiment runner.
//!
//! Each experiment id wires the other modules into one evaluation, writes
//! plot-ready CSV files plus a `summary.json`, and records named checks.
//! The summary embeds the full spec, so any run can be repeated exactly by
//! feeding the summary back in.

mod costs;
mod experiments;
mod spec;
mod stats;

use std::path::Path;

use serde_json::json;

pub use costs::{compare_costs, CostComparison};
pub use experiments::{
    calibrate_delta, execute, honest_setup, independent_runs_distances, Check, HonestSetup,
    IndependentRuns, Output,
};
pub use spec::{AttackConfig, BlindfoldConfig, DataConfig, ExperimentId, ExperimentSpec};
pub use stats::{ln_gamma, reg_inc_beta, student_t_sf, t_test_one_tailed, Histogram, TTestResult};

use crate::error::Result;

/// Summary of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub checks: Vec<Check>,
    pub files: Vec<String>,
}

impl RunOutcome {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Runs `spec` and writes its CSV files and `summary.json` into `out_dir`.
pub fn run(spec: &ExperimentSpec, out_dir: &Path) -> Result<RunOutcome> {
    let output = execute(spec)?;
    std::fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    for (name, csv) in &output.tables {
        std::fs::write(out_dir.join(name), csv)?;
        files.push(name.clone());
    }
    let summary = json!({
        "experiment": spec.id.name(),
        "spec": spec,
        "results": output.summary,
        "checks": output.checks,
    });
    let text =
        serde_json::to_string_pretty(&summary).map_err(|e| crate::Error::Io(e.to_string()))?;
    std::fs::write(out_dir.join("summary.json"), text)?;
    files.push("summary.json".into());
    Ok(RunOutcome {
        checks: output.checks,
        files,
    })
}
