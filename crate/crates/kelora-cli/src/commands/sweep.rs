//! `sweep-sparsity`: trains one model per grid value of s on the shared
//! dataset, reporting final loss/accuracy and the accuracy-optimal s.

use std::path::Path;

use kelora::trainer::train_classifier;
use kelora::MemoryMeter;
use serde::Serialize;

use crate::commands::{build_model_with_sparsity, resolve_dataset};
use crate::config::RunConfig;
use crate::csvio::{fmt_f64, CsvTable};
use crate::error::{CliError, Result};
use crate::report::RunReport;

pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Serialize)]
pub struct SweepMetrics {
    /// (s, final loss, final accuracy) in grid order.
    pub rows: Vec<(f64, f64, f64)>,
    /// Grid value with the highest final accuracy (first on ties).
    pub best_sparsity: f64,
}

pub fn run(cfg: &RunConfig, out: &Path) -> Result<RunReport<SweepMetrics>> {
    let data = resolve_dataset(cfg)?;
    let train_cfg = cfg.train_config(data.len());

    let mut rows = Vec::with_capacity(cfg.sweep_sparsity.grid.len());
    for &s in &cfg.sweep_sparsity.grid {
        let mut model = build_model_with_sparsity(cfg, &data, s)?;
        let mut meter = MemoryMeter::new();
        let records =
            train_classifier(&mut model, &data, &train_cfg, &mut meter).map_err(CliError::Numerical)?;
        let (loss, accuracy) = records
            .last()
            .map(|r| (r.loss, r.accuracy))
            .unwrap_or((f64::NAN, f64::NAN));
        rows.push((s, loss, accuracy));
    }

    let mut table = CsvTable::new(&["s", "final_loss", "final_accuracy"]);
    for &(s, loss, accuracy) in &rows {
        table.row(&[fmt_f64(s), fmt_f64(loss), fmt_f64(accuracy)]);
    }
    table.write(&out.join(SWEEP_FILE))?;

    // first grid entry wins ties, so the report is order-stable
    let mut best = rows[0];
    for row in &rows[1..] {
        if row.2 > best.2 {
            best = *row;
        }
    }
    let best_sparsity = best.0;
    let metrics = SweepMetrics {
        rows,
        best_sparsity,
    };
    Ok(RunReport::new("sweep-sparsity", cfg, metrics)
        .with_artifacts(vec![SWEEP_FILE.to_string()]))
}
