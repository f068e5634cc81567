//! `rank-study`: numeric rank of merged updates per kernel. Linear merges
//! are capped at r by construction; kernels with randomized nonzero scales
//! break through it.

use std::path::Path;

use kelora::numkit::{numeric_rank, randn, DEFAULT_RANK_REL_TOL};
use kelora::{KernelizedAdapter, Matrix, MergeMode, RngStream};
use serde::Serialize;

use crate::commands::map_seeds;
use crate::config::RunConfig;
use crate::csvio::CsvTable;
use crate::error::{CliError, Result};
use crate::report::RunReport;

pub const TABLE_FILE: &str = "rank_table.csv";

#[derive(Debug, Serialize)]
pub struct RankMetrics {
    /// (kernel, min rank, max rank) across seeds, randomized scales.
    pub randomized: Vec<(String, usize, usize)>,
    /// (kernel, rank) with scales left at zero (merge is the zero matrix).
    pub zero_scale: Vec<(String, usize)>,
    pub factor_rank: usize,
}

struct SeedRow {
    randomized: Vec<usize>,
    zero_scale: Vec<Option<usize>>,
}

pub fn run(cfg: &RunConfig, out: &Path, workers: usize) -> Result<RunReport<RankMetrics>> {
    let rs = &cfg.rank_study;

    let rows = map_seeds(rs.seeds, workers, |i| {
        let seed = cfg.seed + i as u64;
        let mut rng = RngStream::new(seed);
        let b = randn(&mut rng, rs.rows, rs.rank, 1.0);
        let a = randn(&mut rng, rs.cols, rs.rank, 1.0);
        let mut randomized = Vec::with_capacity(rs.kernels.len());
        let mut zero_scale = Vec::with_capacity(rs.kernels.len());
        for choice in &rs.kernels {
            let mut kernel = choice.to_spec(rs.segments);
            if rs.include_zero_scale && kernel.param_count() > 0 {
                let adapter = make_adapter(rs.rows, rs.cols, &b, &a, kernel.clone())?;
                let rank = numeric_rank(&adapter.merge(), DEFAULT_RANK_REL_TOL)
                    .map_err(CliError::Numerical)?;
                zero_scale.push(Some(rank));
            } else {
                zero_scale.push(None);
            }
            kernel.randomize_scales(&mut rng);
            let adapter = make_adapter(rs.rows, rs.cols, &b, &a, kernel)?;
            let rank = numeric_rank(&adapter.merge(), DEFAULT_RANK_REL_TOL)
                .map_err(CliError::Numerical)?;
            randomized.push(rank);
        }
        Ok(SeedRow {
            randomized,
            zero_scale,
        })
    })?;

    let mut table = CsvTable::new(&["kernel", "scales", "rows", "cols", "r", "seed", "rank"]);
    for (k, choice) in rs.kernels.iter().enumerate() {
        for (i, row) in rows.iter().enumerate() {
            let seed = cfg.seed + i as u64;
            if let Some(rank) = row.zero_scale[k] {
                table.row(&[
                    choice.name().to_string(),
                    "zero".to_string(),
                    rs.rows.to_string(),
                    rs.cols.to_string(),
                    rs.rank.to_string(),
                    seed.to_string(),
                    rank.to_string(),
                ]);
            }
            table.row(&[
                choice.name().to_string(),
                "randomized".to_string(),
                rs.rows.to_string(),
                rs.cols.to_string(),
                rs.rank.to_string(),
                seed.to_string(),
                row.randomized[k].to_string(),
            ]);
        }
    }
    table.write(&out.join(TABLE_FILE))?;

    let mut randomized = Vec::with_capacity(rs.kernels.len());
    let mut zero_scale = Vec::new();
    for (k, choice) in rs.kernels.iter().enumerate() {
        let ranks: Vec<usize> = rows.iter().map(|r| r.randomized[k]).collect();
        let min = ranks.iter().min().copied().unwrap_or(0);
        let max = ranks.iter().max().copied().unwrap_or(0);
        randomized.push((choice.name().to_string(), min, max));
        if let Some(rank) = rows.first().and_then(|r| r.zero_scale[k]) {
            zero_scale.push((choice.name().to_string(), rank));
        }
    }
    let metrics = RankMetrics {
        randomized,
        zero_scale,
        factor_rank: rs.rank,
    };
    Ok(RunReport::new("rank-study", cfg, metrics)
        .with_artifacts(vec![TABLE_FILE.to_string()]))
}

fn make_adapter(
    rows: usize,
    cols: usize,
    b: &Matrix,
    a: &Matrix,
    kernel: kelora::KernelSpec,
) -> Result<KernelizedAdapter> {
    KernelizedAdapter::from_parts(
        Matrix::zeros(rows, cols),
        b.clone(),
        a.clone(),
        kernel,
        0.0,
        MergeMode::Recompute,
    )
    .map_err(CliError::Numerical)
}
