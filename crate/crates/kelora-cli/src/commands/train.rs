//! `train`: end-to-end classifier training with metric traces, a
//! checkpoint, and a store-vs-recompute memory profile.

use std::path::Path;

use kelora::trainer::{train_classifier, Dataset, TinyModel};
use kelora::{MemoryMeter, MergeMode};
use serde::Serialize;

use crate::checkpoint::save_checkpoint;
use crate::commands::{build_model, resolve_dataset};
use crate::config::RunConfig;
use crate::csvio::{fmt_f64, save_csv_dataset, CsvTable};
use crate::error::{CliError, Result};
use crate::report::RunReport;

pub const METRICS_FILE: &str = "metrics.csv";
pub const DATASET_FILE: &str = "dataset.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Debug, Serialize)]
pub struct TrainMetrics {
    pub final_loss: f64,
    pub final_accuracy: f64,
    pub epochs_run: usize,
    pub steps_run: usize,
    /// Frozen base weights are content-hashed before and after training.
    pub frozen_hash_before: String,
    pub frozen_hash_after: String,
    pub frozen_unchanged: bool,
    /// Peak tracked floats during training (configured mode).
    pub train_peak_floats: usize,
    pub profile: MemoryProfile,
}

/// One profiling epoch (forward+backward over every batch, params cloned)
/// per memory mode.
#[derive(Debug, Serialize)]
pub struct MemoryProfile {
    pub store_peak_floats: usize,
    pub recompute_peak_floats: usize,
}

pub fn run(cfg: &RunConfig, out: &Path) -> Result<RunReport<TrainMetrics>> {
    let data = resolve_dataset(cfg)?;
    let mut artifacts = vec![METRICS_FILE.to_string(), format!("{CHECKPOINT_DIR}/")];
    if cfg.dataset.csv.is_none() {
        // generated data ships with the run so the checkpoint is self-contained
        save_csv_dataset(&out.join(DATASET_FILE), &data)?;
        artifacts.push(DATASET_FILE.to_string());
    }
    let train_cfg = cfg.train_config(data.len());
    let mut model = build_model(cfg, &data)?;

    let frozen_before = model.frozen_weights_hash();
    let mut meter = MemoryMeter::new();
    let records =
        train_classifier(&mut model, &data, &train_cfg, &mut meter).map_err(CliError::Numerical)?;
    let frozen_after = model.frozen_weights_hash();

    let mut table = CsvTable::new(&["step", "lr", "loss", "accuracy"]);
    for r in &records {
        table.row(&[
            r.step.to_string(),
            fmt_f64(r.lr),
            fmt_f64(r.loss),
            fmt_f64(r.accuracy),
        ]);
    }
    table.write(&out.join(METRICS_FILE))?;

    let checkpoint_dir = out.join(CHECKPOINT_DIR);
    save_checkpoint(
        &checkpoint_dir,
        &model,
        cfg.seed,
        cfg.mode,
        cfg.model.sparsity,
    )?;

    let profile = profile_modes(&model, &data, train_cfg.batch_size)?;

    let (final_loss, final_accuracy) = records
        .last()
        .map(|r| (r.loss, r.accuracy))
        .unwrap_or((f64::NAN, f64::NAN));
    let metrics = TrainMetrics {
        final_loss,
        final_accuracy,
        epochs_run: records.len(),
        steps_run: records.last().map(|r| r.step).unwrap_or(0),
        frozen_hash_before: format!("{frozen_before:016x}"),
        frozen_hash_after: format!("{frozen_after:016x}"),
        frozen_unchanged: frozen_before == frozen_after,
        train_peak_floats: meter.peak_floats(),
        profile,
    };
    Ok(RunReport::new("train", cfg, metrics).with_artifacts(artifacts))
}

/// Runs one epoch of forward+backward (updates discarded with the clone)
/// under each memory mode and reports the peak tracked floats.
fn profile_modes(model: &TinyModel, data: &Dataset, batch_size: usize) -> Result<MemoryProfile> {
    let mut peaks = [0usize; 2];
    for (slot, mode) in [(0, MergeMode::Store), (1, MergeMode::Recompute)] {
        let mut probe = model.clone();
        for layer in probe.layers_mut() {
            layer.set_mode(mode);
        }
        let steps = data.len().div_ceil(batch_size);
        let profile_cfg = kelora::trainer::TrainConfig {
            total_steps: steps,
            batch_size,
            ..kelora::trainer::TrainConfig::default()
        };
        let mut meter = MemoryMeter::new();
        train_classifier(&mut probe, data, &profile_cfg, &mut meter)
            .map_err(CliError::Numerical)?;
        peaks[slot] = meter.peak_floats();
    }
    Ok(MemoryProfile {
        store_peak_floats: peaks[0],
        recompute_peak_floats: peaks[1],
    })
}
