//! `export`: merge a trained checkpoint's adapters into dense deltas.

use std::path::Path;

use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_export, CHECKPOINT_MANIFEST, EXPORT_MANIFEST};
use crate::commands::train::CHECKPOINT_DIR;
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::report::RunReport;

pub const EXPORT_DIR: &str = "export";

#[derive(Debug, Serialize)]
pub struct ExportMetrics {
    pub layers: usize,
    pub layer_shapes: Vec<(usize, usize)>,
    pub sparsity: f64,
    pub source_checkpoint: String,
}

pub fn run(cfg: &RunConfig, out: &Path) -> Result<RunReport<ExportMetrics>> {
    let checkpoint_dir = cfg
        .export
        .checkpoint
        .clone()
        .unwrap_or_else(|| out.join(CHECKPOINT_DIR));
    let manifest_path = checkpoint_dir.join(CHECKPOINT_MANIFEST);
    if !manifest_path.is_file() {
        return Err(CliError::config(format!(
            "no checkpoint manifest at {}; run the train command first or point \
             export.checkpoint at a checkpoint directory",
            manifest_path.display()
        )));
    }

    let (model, manifest) = load_checkpoint(&checkpoint_dir)?;
    let export_dir = out.join(EXPORT_DIR);
    save_export(&export_dir, &model, &manifest, &checkpoint_dir)?;

    let layer_shapes: Vec<(usize, usize)> = manifest
        .layers
        .iter()
        .map(|l| (l.rows, l.cols))
        .collect();
    let metrics = ExportMetrics {
        layers: layer_shapes.len(),
        layer_shapes,
        sparsity: manifest.sparsity,
        source_checkpoint: checkpoint_dir.display().to_string(),
    };
    Ok(RunReport::new("export", cfg, metrics).with_artifacts(vec![
        format!("{EXPORT_DIR}/"),
        format!("{EXPORT_DIR}/{EXPORT_MANIFEST}"),
    ]))
}
