//! Deterministic run reports plus a volatile timing sidecar.
//!
//! `report.json` is a pure function of (config, seed): it embeds the full
//! config echo and every metric, so a rerun must reproduce it byte for
//! byte. Wall-clock time goes to `timing.json` instead, which is excluded
//! from that guarantee by design.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Debug, Serialize)]
pub struct RunReport<M: Serialize> {
    pub command: &'static str,
    pub seed: u64,
    /// Full configuration echo; rerunning with exactly this content (plus
    /// the same subcommand) reproduces the run.
    pub config: RunConfig,
    pub metrics: M,
    /// Files written by the run, relative to the output directory.
    pub artifacts: Vec<String>,
    /// Where the wall-clock numbers live (volatile, not byte-stable).
    pub timing_file: &'static str,
}

impl<M: Serialize> RunReport<M> {
    pub fn new(command: &'static str, config: &RunConfig, metrics: M) -> Self {
        RunReport {
            command,
            seed: config.seed,
            config: config.clone(),
            metrics,
            artifacts: Vec::new(),
            timing_file: TIMING_FILE,
        }
    }

    pub fn with_artifacts(mut self, artifacts: Vec<String>) -> Self {
        self.artifacts = artifacts;
        self
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join(REPORT_FILE);
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::config(format!("report serialization: {e}")))?;
        std::fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

#[derive(Debug, Serialize)]
struct Timing {
    wall_clock_seconds: f64,
}

pub fn write_timing(out_dir: &Path, wall_clock_seconds: f64) -> Result<()> {
    let path = out_dir.join(TIMING_FILE);
    let json = serde_json::to_string_pretty(&Timing { wall_clock_seconds })
        .expect("timing serializes");
    std::fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))
}
