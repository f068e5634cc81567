//! Command-line driver for the kelora experiments.
//!
//! Every subcommand is a pure function of (config file, seed): rerunning
//! with the same inputs reproduces every report byte for byte. Wall-clock
//! time is quarantined in `timing.json`.

mod checkpoint;
mod commands;
mod config;
mod csvio;
mod error;
mod report;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{ModeChoice, RunConfig};
use crate::csvio::fmt_f64;
use crate::error::{CliError, Result};
use crate::report::write_timing;

/// Environment variable consulted for the default output directory. It is
/// honored only when neither `--out` nor the config `out` key is set.
const OUT_ENV: &str = "KELORA_OUT";

#[derive(Parser)]
#[command(
    name = "kelora",
    version,
    about = "Kernelized low-rank adapter experiments",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// TOML config file (missing flag means built-in defaults).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the seed from the config file.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Output directory. Falls back to the config `out` key, then the
    /// KELORA_OUT environment variable, then `./runs`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Override the memory mode for adapter merges.
    #[arg(long, global = true, value_enum, value_name = "MODE")]
    mode: Option<ModeFlag>,

    /// Additionally write plot-ready wide CSV where the experiment has one.
    #[arg(long, global = true)]
    emit_plot_data: bool,

    /// Fan independent seeds across N worker threads. Results are merged in
    /// seed order, so the output does not depend on N.
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    parallel_seeds: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeFlag {
    Store,
    Recompute,
}

impl ModeFlag {
    fn to_choice(self) -> ModeChoice {
        match self {
            ModeFlag::Store => ModeChoice::Store,
            ModeFlag::Recompute => ModeChoice::Recompute,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Fit seeded Gaussian target matrices with every configured kernel.
    FitMatrix,
    /// Tabulate the numeric rank of merged updates per kernel and seed.
    RankStudy,
    /// Train one classifier per sparsity grid value and compare them.
    SweepSparsity,
    /// Train the classifier; write metrics, a checkpoint, memory profiles.
    Train,
    /// Merge a trained checkpoint into dense per-layer weight files.
    Export,
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::FitMatrix => "fit-matrix",
            Cmd::RankStudy => "rank-study",
            Cmd::SweepSparsity => "sweep-sparsity",
            Cmd::Train => "train",
            Cmd::Export => "export",
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(summary) => println!("{summary}"),
        Err(e) => {
            eprintln!("{}", e.stderr_line());
            std::process::exit(e.exit_code());
        }
    }
}

fn dispatch(cli: Cli) -> Result<String> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    // Flags that change the numbers are folded into the config before it is
    // echoed, so the report stays re-runnable. The output directory is not:
    // where files land must not change what they contain.
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = cli.mode {
        cfg.mode = mode.to_choice();
    }
    if cli.parallel_seeds == 0 {
        return Err(CliError::config("--parallel-seeds: must be positive"));
    }
    cfg.validate()?;

    let name = cli.command.name();
    if let Some(pin) = &cfg.experiment {
        if pin != name {
            return Err(CliError::config(format!(
                "config pins experiment \"{pin}\" but the {name} subcommand was invoked"
            )));
        }
    }

    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("./runs"));
    commands::prepare_out(&out)?;

    let started = Instant::now();
    let summary = match &cli.command {
        Cmd::FitMatrix => {
            let report = commands::fit::run(&cfg, &out, cli.parallel_seeds, cli.emit_plot_data)?;
            report.write(&out)?;
            let (best, mse) = report
                .metrics
                .mean_final_mse
                .iter()
                .find(|(n, _)| *n == report.metrics.best_kernel)
                .expect("best kernel comes from this list");
            format!(
                "fit-matrix: {} kernels x {} seeds, best {} (mean final mse {})",
                cfg.fit_matrix.kernels.len(),
                cfg.fit_matrix.seeds,
                best,
                fmt_f64(*mse)
            )
        }
        Cmd::RankStudy => {
            let report = commands::rank::run(&cfg, &out, cli.parallel_seeds)?;
            report.write(&out)?;
            let spans: Vec<String> = report
                .metrics
                .randomized
                .iter()
                .map(|(n, lo, hi)| format!("{n} {lo}..{hi}"))
                .collect();
            format!(
                "rank-study: factor rank {}, merge ranks {}",
                report.metrics.factor_rank,
                spans.join(", ")
            )
        }
        Cmd::SweepSparsity => {
            let report = commands::sweep::run(&cfg, &out)?;
            report.write(&out)?;
            format!(
                "sweep-sparsity: {} grid points, best s = {}",
                report.metrics.rows.len(),
                fmt_f64(report.metrics.best_sparsity)
            )
        }
        Cmd::Train => {
            let report = commands::train::run(&cfg, &out)?;
            report.write(&out)?;
            format!(
                "train: {} epochs, final accuracy {}, frozen weights unchanged: {}",
                report.metrics.epochs_run,
                fmt_f64(report.metrics.final_accuracy),
                report.metrics.frozen_unchanged
            )
        }
        Cmd::Export => {
            let report = commands::export::run(&cfg, &out)?;
            report.write(&out)?;
            format!(
                "export: {} layers merged from {}",
                report.metrics.layers, report.metrics.source_checkpoint
            )
        }
    };
    write_timing(&out, started.elapsed().as_secs_f64())?;
    Ok(format!("{summary}; wrote {}", out.display()))
}
