pub mod export;
pub mod fit;
pub mod rank;
pub mod sweep;
pub mod train;

use std::path::Path;

use kelora::trainer::{make_blobs, Dataset, TinyModel};
use kelora::KernelSpec;

use crate::config::RunConfig;
use crate::csvio;
use crate::error::{CliError, Result};

/// Builds the configured dataset: a CSV file when one is named, otherwise
/// seeded Gaussian blobs.
pub fn resolve_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.dataset.csv {
        Some(path) => csvio::load_csv_dataset(path),
        None => make_blobs(
            cfg.seed,
            cfg.dataset.samples,
            cfg.dataset.features,
            cfg.dataset.classes,
            cfg.dataset.separation,
        )
        .map_err(CliError::Numerical),
    }
}

/// Builds the TinyModel described by `[model]` on top of `data`.
pub fn build_model(cfg: &RunConfig, data: &Dataset) -> Result<TinyModel> {
    build_model_with_sparsity(cfg, data, cfg.model.sparsity)
}

pub fn build_model_with_sparsity(
    cfg: &RunConfig,
    data: &Dataset,
    sparsity: f64,
) -> Result<TinyModel> {
    let mut dims = Vec::with_capacity(cfg.model.hidden.len() + 1);
    dims.push(data.feature_dim());
    dims.extend_from_slice(&cfg.model.hidden);
    let kernel: KernelSpec = cfg.model.kernel.to_spec(cfg.model.segments);
    for pair in dims.windows(2) {
        let limit = pair[0].min(pair[1]);
        if cfg.model.rank > limit {
            eprintln!(
                "kelora: warning: model.rank {} exceeds min(m, n) = {limit} for a {}x{} layer",
                cfg.model.rank, pair[1], pair[0]
            );
        }
    }
    TinyModel::new(
        &dims,
        data.class_count,
        cfg.model.rank,
        &kernel,
        sparsity,
        cfg.mode.to_mode(),
        cfg.seed,
    )
    .map_err(CliError::Numerical)
}

/// Runs `work(seed_index)` for every index in `0..count`, fanning across at
/// most `workers` threads, and returns the results in seed order. Each call
/// owns its state, so the fan-out cannot change any output.
pub fn map_seeds<T, F>(count: usize, workers: usize, work: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = workers.max(1).min(count.max(1));
    if workers <= 1 {
        return (0..count).map(&work).collect();
    }
    let mut merged: Vec<(usize, Result<T>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let work = &work;
                scope.spawn(move || {
                    let mut chunk = Vec::new();
                    let mut index = w;
                    while index < count {
                        chunk.push((index, work(index)));
                        index += workers;
                    }
                    chunk
                })
            })
            .collect();
        let mut merged = Vec::with_capacity(count);
        for handle in handles {
            merged.extend(handle.join().expect("seed worker panicked"));
        }
        merged
    });
    merged.sort_by_key(|(index, _)| *index);
    merged.into_iter().map(|(_, result)| result).collect()
}

/// Ensures the output directory exists.
pub fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}
