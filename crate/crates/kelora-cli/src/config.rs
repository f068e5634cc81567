use std::path::{Path, PathBuf};

use kelora::{KernelSpec, MergeMode};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Kernel selector as it appears in config files and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelChoice {
    Linear,
    PiecewiseLinear,
    Sigmoid,
    Rbf,
}

impl KernelChoice {
    pub fn to_spec(self, segments: usize) -> KernelSpec {
        match self {
            KernelChoice::Linear => KernelSpec::Linear,
            KernelChoice::PiecewiseLinear => KernelSpec::piecewise_linear(segments),
            KernelChoice::Sigmoid => KernelSpec::sigmoid(),
            KernelChoice::Rbf => KernelSpec::rbf(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelChoice::Linear => "linear",
            KernelChoice::PiecewiseLinear => "piecewise_linear",
            KernelChoice::Sigmoid => "sigmoid",
            KernelChoice::Rbf => "rbf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeChoice {
    Store,
    Recompute,
}

impl ModeChoice {
    pub fn to_mode(self) -> MergeMode {
        match self {
            ModeChoice::Store => MergeMode::Store,
            ModeChoice::Recompute => MergeMode::Recompute,
        }
    }
}

fn default_seed() -> u64 {
    42
}
fn default_mode() -> ModeChoice {
    ModeChoice::Recompute
}

/// Top-level run configuration. Every field has a default, so an empty file
/// (or none at all) is a valid config; unknown keys are rejected. CLI flags
/// override file values, which override these defaults. The output
/// directory resolves as: `--out` flag, then the `out` key, then the
/// `KELORA_OUT` environment variable, then `./runs`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Optional experiment pin; when present it must match the subcommand.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub mode: ModeChoice,
    pub fit_matrix: FitMatrixConfig,
    pub rank_study: RankStudyConfig,
    pub sweep_sparsity: SweepConfig,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub export: ExportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: None,
            seed: default_seed(),
            out: None,
            mode: default_mode(),
            fit_matrix: FitMatrixConfig::default(),
            rank_study: RankStudyConfig::default(),
            sweep_sparsity: SweepConfig::default(),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            export: ExportConfig::default(),
        }
    }
}

/// Matrix-fitting experiment: every kernel fits the same seeded targets.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitMatrixConfig {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub steps: usize,
    pub lr: f64,
    /// Number of seeded targets; target i uses seed `seed + i`.
    pub seeds: usize,
    pub kernels: Vec<KernelChoice>,
    pub segments: usize,
    pub record_every: usize,
}

impl Default for FitMatrixConfig {
    fn default() -> Self {
        FitMatrixConfig {
            rows: 32,
            cols: 32,
            rank: 4,
            steps: 20_000,
            lr: 1e-3,
            seeds: 10,
            kernels: vec![
                KernelChoice::Linear,
                KernelChoice::PiecewiseLinear,
                KernelChoice::Sigmoid,
                KernelChoice::Rbf,
            ],
            segments: 2,
            record_every: 500,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankStudyConfig {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub seeds: usize,
    pub kernels: Vec<KernelChoice>,
    pub segments: usize,
    /// Also emit rows for parameterized kernels with their scales left at
    /// zero (the merge is then the zero matrix, rank 0).
    pub include_zero_scale: bool,
}

impl Default for RankStudyConfig {
    fn default() -> Self {
        RankStudyConfig {
            rows: 64,
            cols: 64,
            rank: 4,
            seeds: 10,
            kernels: vec![
                KernelChoice::Linear,
                KernelChoice::PiecewiseLinear,
                KernelChoice::Sigmoid,
                KernelChoice::Rbf,
            ],
            segments: 2,
            include_zero_scale: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub grid: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            grid: vec![0.0, 0.2, 0.5, 0.8, 0.9, 0.99],
        }
    }
}

/// Training data: seeded Gaussian blobs by default, or a CSV file when
/// `csv` is set (header row, final column = integer label).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    pub samples: usize,
    pub features: usize,
    pub classes: usize,
    pub separation: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            csv: None,
            samples: 500,
            features: 16,
            classes: 2,
            separation: 4.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Widths of the adapted hidden layers (the input width comes from the
    /// dataset). ReLU sits between layers.
    pub hidden: Vec<usize>,
    pub rank: usize,
    pub kernel: KernelChoice,
    pub segments: usize,
    pub sparsity: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![32, 32],
            rank: 8,
            kernel: KernelChoice::PiecewiseLinear,
            segments: 2,
            sparsity: 0.9,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            base_lr: 1e-3,
            weight_decay: 1e-4,
            batch_size: 32,
            epochs: 200,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportConfig {
    /// Checkpoint directory to export; defaults to `<out>/checkpoint`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        // keep parse failures on one line so stderr stays machine-parseable
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| {
            let spot = e
                .span()
                .map(|span| {
                    let before = &text[..span.start.min(text.len())];
                    let line = 1 + before.matches('\n').count();
                    let col = 1 + before.len() - before.rfind('\n').map_or(0, |i| i + 1);
                    format!(" at line {line}, column {col}")
                })
                .unwrap_or_default();
            CliError::config(format!("{}{spot}: {}", path.display(), e.message()))
        })?;
        Ok(cfg)
    }

    /// Field-level sanity checks shared by every subcommand, erroring with
    /// the config key that failed.
    pub fn validate(&self) -> Result<()> {
        let fm = &self.fit_matrix;
        Self::positive("fit_matrix.rows", fm.rows)?;
        Self::positive("fit_matrix.cols", fm.cols)?;
        Self::positive("fit_matrix.rank", fm.rank)?;
        Self::positive("fit_matrix.steps", fm.steps)?;
        Self::positive("fit_matrix.seeds", fm.seeds)?;
        Self::positive("fit_matrix.segments", fm.segments)?;
        Self::positive("fit_matrix.record_every", fm.record_every)?;
        Self::positive_f64("fit_matrix.lr", fm.lr)?;
        if fm.kernels.is_empty() {
            return Err(CliError::config("fit_matrix.kernels: must not be empty"));
        }
        if fm.kernels.contains(&KernelChoice::PiecewiseLinear) && fm.segments > fm.rank {
            return Err(CliError::config(format!(
                "fit_matrix.segments: {} segments exceed rank {}",
                fm.segments, fm.rank
            )));
        }
        let rs = &self.rank_study;
        Self::positive("rank_study.rows", rs.rows)?;
        Self::positive("rank_study.cols", rs.cols)?;
        Self::positive("rank_study.rank", rs.rank)?;
        Self::positive("rank_study.seeds", rs.seeds)?;
        Self::positive("rank_study.segments", rs.segments)?;
        if rs.kernels.is_empty() {
            return Err(CliError::config("rank_study.kernels: must not be empty"));
        }
        if rs.kernels.contains(&KernelChoice::PiecewiseLinear) && rs.segments > rs.rank {
            return Err(CliError::config(format!(
                "rank_study.segments: {} segments exceed rank {}",
                rs.segments, rs.rank
            )));
        }
        if self.sweep_sparsity.grid.is_empty() {
            return Err(CliError::config("sweep_sparsity.grid: must not be empty"));
        }
        for &s in &self.sweep_sparsity.grid {
            if !(0.0..=1.0).contains(&s) {
                return Err(CliError::config(format!(
                    "sweep_sparsity.grid: value {s} outside [0, 1]"
                )));
            }
        }
        let ds = &self.dataset;
        if ds.csv.is_none() {
            Self::positive("dataset.samples", ds.samples)?;
            Self::positive("dataset.features", ds.features)?;
            if ds.classes < 2 {
                return Err(CliError::config("dataset.classes: must be at least 2"));
            }
            if !ds.separation.is_finite() || ds.separation < 0.0 {
                return Err(CliError::config(
                    "dataset.separation: must be finite and non-negative",
                ));
            }
        }
        let md = &self.model;
        if md.hidden.is_empty() {
            return Err(CliError::config("model.hidden: must not be empty"));
        }
        for &h in &md.hidden {
            Self::positive("model.hidden", h)?;
        }
        Self::positive("model.rank", md.rank)?;
        Self::positive("model.segments", md.segments)?;
        if md.kernel == KernelChoice::PiecewiseLinear && md.segments > md.rank {
            return Err(CliError::config(format!(
                "model.segments: {} segments exceed rank {}",
                md.segments, md.rank
            )));
        }
        if !(0.0..=1.0).contains(&md.sparsity) {
            return Err(CliError::config(format!(
                "model.sparsity: value {} outside [0, 1]",
                md.sparsity
            )));
        }
        let tr = &self.train;
        Self::positive_f64("train.base_lr", tr.base_lr)?;
        if tr.weight_decay < 0.0 || !tr.weight_decay.is_finite() {
            return Err(CliError::config(
                "train.weight_decay: must be finite and non-negative",
            ));
        }
        Self::positive("train.batch_size", tr.batch_size)?;
        for (name, b) in [("train.betas[0]", tr.betas.0), ("train.betas[1]", tr.betas.1)] {
            if !(0.0..1.0).contains(&b) {
                return Err(CliError::config(format!("{name}: value {b} outside [0, 1)")));
            }
        }
        Self::positive_f64("train.eps", tr.eps)?;
        Ok(())
    }

    fn positive(name: &str, value: usize) -> Result<()> {
        if value == 0 {
            return Err(CliError::config(format!("{name}: must be positive")));
        }
        Ok(())
    }

    fn positive_f64(name: &str, value: f64) -> Result<()> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(CliError::config(format!(
                "{name}: must be positive and finite, got {value}"
            )));
        }
        Ok(())
    }

    /// TrainConfig for the core crate, with total steps derived from epochs
    /// and the dataset size (one epoch = ceil(N / batch) steps).
    pub fn train_config(&self, dataset_len: usize) -> kelora::trainer::TrainConfig {
        let steps_per_epoch = dataset_len.div_ceil(self.train.batch_size);
        kelora::trainer::TrainConfig {
            base_lr: self.train.base_lr,
            weight_decay: self.train.weight_decay,
            batch_size: self.train.batch_size,
            total_steps: self.train.epochs * steps_per_epoch,
            betas: self.train.betas,
            eps: self.train.eps,
            seed: self.seed,
        }
    }
}
