//! Checkpoint and export file formats.
//!
//! Matrices are raw binary: row-major f64, little-endian, no header; the
//! JSON manifest next to them carries every shape. A checkpoint directory
//! holds `checkpoint.json` plus one `.bin` per tensor; an export directory
//! holds `export.json` plus one merged `.bin` per layer.

use std::path::{Path, PathBuf};

use kelora::trainer::{DenseHead, TinyModel};
use kelora::{KernelizedAdapter, KernelSpec, Matrix};
use serde::{Deserialize, Serialize};

use crate::config::{KernelChoice, ModeChoice};
use crate::error::{CliError, Result};

pub const CHECKPOINT_MANIFEST: &str = "checkpoint.json";
pub const EXPORT_MANIFEST: &str = "export.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelManifest {
    pub kind: KernelChoice,
    pub segments: usize,
    pub params: Vec<f64>,
}

impl KernelManifest {
    pub fn from_spec(spec: &KernelSpec) -> Self {
        let (kind, segments) = match spec {
            KernelSpec::Linear => (KernelChoice::Linear, 0),
            KernelSpec::PiecewiseLinear { alpha } => {
                (KernelChoice::PiecewiseLinear, alpha.len())
            }
            KernelSpec::Sigmoid { .. } => (KernelChoice::Sigmoid, 0),
            KernelSpec::Rbf { .. } => (KernelChoice::Rbf, 0),
        };
        KernelManifest {
            kind,
            segments,
            params: spec.params(),
        }
    }

    pub fn to_spec(&self) -> Result<KernelSpec> {
        let mut spec = self.kind.to_spec(self.segments.max(1));
        if self.params.len() != spec.param_count() {
            return Err(CliError::config(format!(
                "kernel manifest: {} expects {} parameters, found {}",
                self.kind.name(),
                spec.param_count(),
                self.params.len()
            )));
        }
        if !self.params.is_empty() {
            spec.set_params(&self.params).map_err(CliError::Numerical)?;
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerManifest {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub w0: String,
    pub a: String,
    pub b: String,
    pub kernel: KernelManifest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadManifest {
    pub classes: usize,
    pub hidden: usize,
    pub w: String,
    pub bias: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub seed: u64,
    pub mode: ModeChoice,
    pub sparsity: f64,
    pub layers: Vec<LayerManifest>,
    pub head: HeadManifest,
}

pub fn write_matrix(path: &Path, matrix: &Matrix) -> Result<()> {
    let mut bytes = Vec::with_capacity(matrix.data().len() * 8);
    for &v in matrix.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_matrix(path: &Path, rows: usize, cols: usize) -> Result<Matrix> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.len() != rows * cols * 8 {
        return Err(CliError::config(format!(
            "{}: expected {} bytes for a {rows}x{cols} matrix, found {}",
            path.display(),
            rows * cols * 8,
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunked by 8")))
        .collect();
    Matrix::new(rows, cols, data).map_err(CliError::Numerical)
}

pub fn write_vector(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for &v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_vector(path: &Path, len: usize) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.len() != len * 8 {
        return Err(CliError::config(format!(
            "{}: expected {} bytes for a length-{len} vector, found {}",
            path.display(),
            len * 8,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunked by 8")))
        .collect())
}

pub fn save_checkpoint(
    dir: &Path,
    model: &TinyModel,
    seed: u64,
    mode: ModeChoice,
    sparsity: f64,
) -> Result<CheckpointManifest> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut layers = Vec::with_capacity(model.layers().len());
    for (i, layer) in model.layers().iter().enumerate() {
        let names = (
            format!("layer{i}.w0.bin"),
            format!("layer{i}.a.bin"),
            format!("layer{i}.b.bin"),
        );
        write_matrix(&dir.join(&names.0), layer.w0())?;
        write_matrix(&dir.join(&names.1), layer.a())?;
        write_matrix(&dir.join(&names.2), layer.b())?;
        layers.push(LayerManifest {
            rows: layer.w0().rows(),
            cols: layer.w0().cols(),
            rank: layer.rank(),
            w0: names.0,
            a: names.1,
            b: names.2,
            kernel: KernelManifest::from_spec(layer.kernel()),
        });
    }
    let head = model.head();
    write_matrix(&dir.join("head.w.bin"), &head.w)?;
    write_vector(&dir.join("head.bias.bin"), &head.bias)?;
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        seed,
        mode,
        sparsity,
        layers,
        head: HeadManifest {
            classes: head.w.rows(),
            hidden: head.w.cols(),
            w: "head.w.bin".to_string(),
            bias: "head.bias.bin".to_string(),
        },
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let path = dir.join(CHECKPOINT_MANIFEST);
    std::fs::write(&path, json + "\n").map_err(|e| CliError::io(path, e))?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(TinyModel, CheckpointManifest)> {
    let manifest_path = dir.join(CHECKPOINT_MANIFEST);
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| CliError::io(&manifest_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", manifest_path.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(CliError::config(format!(
            "{}: unsupported format_version {}",
            manifest_path.display(),
            manifest.format_version
        )));
    }
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for lm in &manifest.layers {
        let w0 = read_matrix(&dir.join(&lm.w0), lm.rows, lm.cols)?;
        let a = read_matrix(&dir.join(&lm.a), lm.cols, lm.rank)?;
        let b = read_matrix(&dir.join(&lm.b), lm.rows, lm.rank)?;
        let kernel = lm.kernel.to_spec()?;
        let adapter = KernelizedAdapter::from_parts(
            w0,
            b,
            a,
            kernel,
            manifest.sparsity,
            manifest.mode.to_mode(),
        )
        .map_err(CliError::Numerical)?;
        layers.push(adapter);
    }
    let head_w = read_matrix(
        &dir.join(&manifest.head.w),
        manifest.head.classes,
        manifest.head.hidden,
    )?;
    let head_bias = read_vector(&dir.join(&manifest.head.bias), manifest.head.classes)?;
    let model = TinyModel::from_parts(
        layers,
        DenseHead {
            w: head_w,
            bias: head_bias,
        },
    )
    .map_err(CliError::Numerical)?;
    Ok((model, manifest))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportLayer {
    pub rows: usize,
    pub cols: usize,
    pub merged: String,
    pub kernel: KernelManifest,
}

/// Sidecar for exported dense weights: shapes, kernel spec, sparsity, seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportManifest {
    pub format_version: u32,
    pub seed: u64,
    pub sparsity: f64,
    pub source_checkpoint: PathBuf,
    pub layers: Vec<ExportLayer>,
}

pub fn save_export(
    dir: &Path,
    model: &TinyModel,
    manifest: &CheckpointManifest,
    source: &Path,
) -> Result<ExportManifest> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut layers = Vec::with_capacity(model.layers().len());
    for (i, layer) in model.layers().iter().enumerate() {
        let merged = layer.export_merged();
        let name = format!("layer{i}.merged.bin");
        write_matrix(&dir.join(&name), &merged)?;
        layers.push(ExportLayer {
            rows: merged.rows(),
            cols: merged.cols(),
            merged: name,
            kernel: KernelManifest::from_spec(layer.kernel()),
        });
    }
    let export = ExportManifest {
        format_version: FORMAT_VERSION,
        seed: manifest.seed,
        sparsity: manifest.sparsity,
        source_checkpoint: source.to_path_buf(),
        layers,
    };
    let json = serde_json::to_string_pretty(&export).expect("manifest serializes");
    let path = dir.join(EXPORT_MANIFEST);
    std::fs::write(&path, json + "\n").map_err(|e| CliError::io(path, e))?;
    Ok(export)
}
