//! `fit-matrix`: every configured kernel fits the same seeded Gaussian
//! targets; traces and per-kernel mean final MSE land in CSV.

use std::path::Path;

use kelora::numkit::randn;
use kelora::trainer::fit_matrix;
use kelora::RngStream;
use serde::Serialize;

use crate::commands::map_seeds;
use crate::config::RunConfig;
use crate::csvio::{fmt_f64, CsvTable};
use crate::error::{CliError, Result};
use crate::report::RunReport;

pub const TRACE_FILE: &str = "fit_trace.csv";
pub const SUMMARY_FILE: &str = "fit_summary.csv";
pub const PLOT_FILE: &str = "plot_fit.csv";

#[derive(Debug, Serialize)]
pub struct FitMetrics {
    /// (kernel, mean final MSE) in config order.
    pub mean_final_mse: Vec<(String, f64)>,
    /// Kernel with the smallest mean final MSE.
    pub best_kernel: String,
}

struct SeedOutcome {
    traces: Vec<Vec<(usize, f64)>>,
    finals: Vec<f64>,
}

pub fn run(
    cfg: &RunConfig,
    out: &Path,
    workers: usize,
    emit_plot_data: bool,
) -> Result<RunReport<FitMetrics>> {
    let fm = &cfg.fit_matrix;
    let kernels: Vec<_> = fm
        .kernels
        .iter()
        .map(|k| (k.name().to_string(), k.to_spec(fm.segments)))
        .collect();

    // each seed index fits every kernel against one shared target
    let outcomes = map_seeds(fm.seeds, workers, |i| {
        let seed = cfg.seed + i as u64;
        let mut rng = RngStream::new(seed);
        let target = randn(&mut rng, fm.rows, fm.cols, 1.0);
        let mut traces = Vec::with_capacity(kernels.len());
        let mut finals = Vec::with_capacity(kernels.len());
        for (_, spec) in &kernels {
            let result = fit_matrix(
                &target,
                fm.rank,
                spec,
                fm.steps,
                fm.lr,
                seed,
                fm.record_every,
            )
            .map_err(CliError::Numerical)?;
            traces.push(result.mse_trace);
            finals.push(result.final_mse);
        }
        Ok(SeedOutcome { traces, finals })
    })?;

    let mut trace_csv = CsvTable::new(&["kernel", "seed", "step", "mse"]);
    for (k, (name, _)) in kernels.iter().enumerate() {
        for (i, outcome) in outcomes.iter().enumerate() {
            let seed = cfg.seed + i as u64;
            for &(step, mse) in &outcome.traces[k] {
                trace_csv.row(&[
                    name.clone(),
                    seed.to_string(),
                    step.to_string(),
                    fmt_f64(mse),
                ]);
            }
        }
    }
    trace_csv.write(&out.join(TRACE_FILE))?;

    let mut summary_csv = CsvTable::new(&["kernel", "mean_final_mse"]);
    let mut mean_final = Vec::with_capacity(kernels.len());
    for (k, (name, _)) in kernels.iter().enumerate() {
        let mean =
            outcomes.iter().map(|o| o.finals[k]).sum::<f64>() / outcomes.len().max(1) as f64;
        summary_csv.row(&[name.clone(), fmt_f64(mean)]);
        mean_final.push((name.clone(), mean));
    }
    summary_csv.write(&out.join(SUMMARY_FILE))?;

    let mut artifacts = vec![TRACE_FILE.to_string(), SUMMARY_FILE.to_string()];
    if emit_plot_data {
        write_plot_data(out, &kernels, &outcomes)?;
        artifacts.push(PLOT_FILE.to_string());
    }

    let best_kernel = mean_final
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(n, _)| n.clone())
        .expect("at least one kernel configured");
    let metrics = FitMetrics {
        mean_final_mse: mean_final,
        best_kernel,
    };
    Ok(RunReport::new("fit-matrix", cfg, metrics).with_artifacts(artifacts))
}

/// Plot-ready wide table: one row per recorded step, one column of
/// mean-over-seeds MSE per kernel.
fn write_plot_data(
    out: &Path,
    kernels: &[(String, kelora::KernelSpec)],
    outcomes: &[SeedOutcome],
) -> Result<()> {
    let mut header = vec!["step"];
    for (name, _) in kernels {
        header.push(name.as_str());
    }
    let mut plot = CsvTable::new(&header);
    let steps: Vec<usize> = outcomes
        .first()
        .map(|o| o.traces[0].iter().map(|&(s, _)| s).collect())
        .unwrap_or_default();
    for (row, &step) in steps.iter().enumerate() {
        let mut cells = vec![step.to_string()];
        for k in 0..kernels.len() {
            let mean = outcomes.iter().map(|o| o.traces[k][row].1).sum::<f64>()
                / outcomes.len() as f64;
            cells.push(fmt_f64(mean));
        }
        plot.row(&cells);
    }
    plot.write(&out.join(PLOT_FILE))
}
