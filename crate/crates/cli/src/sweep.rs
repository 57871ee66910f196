//! Grid search over learning rates and batch sizes with several seeds per cell.

use std::fs;
use std::path::Path;

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::metrics::mean_stderr;
use crate::train::run_training;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub sac_lr: f64,
    pub decor_lr: f64,
    pub batch_size: usize,
}

impl SweepCell {
    /// The base config specialised to this cell. A zero decorrelation rate
    /// drops the policy from the decorrelated networks (plain SAC).
    pub fn apply(&self, base: &RunConfig, seed: u64) -> RunConfig {
        let mut c = base.clone();
        c.sac_lr = self.sac_lr;
        c.batch_size = self.batch_size;
        c.decor_lr_policy = self.decor_lr;
        c.decorrelate.retain(|n| n != "policy");
        if self.decor_lr > 0.0 {
            c.decorrelate.insert(0, "policy".to_string());
        }
        c.seed = seed;
        c
    }
}

/// Cartesian product in `sac_lr`, then `decor_lr`, then `batch_size` order.
pub fn grid(config: &RunConfig) -> Vec<SweepCell> {
    let mut cells = Vec::new();
    for &sac_lr in &config.sweep_sac_lr {
        for &decor_lr in &config.sweep_decor_lr {
            for &batch_size in &config.sweep_batch_size {
                cells.push(SweepCell {
                    sac_lr,
                    decor_lr,
                    batch_size,
                });
            }
        }
    }
    cells
}

/// One row of `runs.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub cell: usize,
    pub sac_lr: f64,
    pub decor_lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub final_return: Option<f64>,
    pub final_d_total: Option<f64>,
    pub wall_clock_seconds: f64,
}

/// One row of `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub sac_lr: f64,
    pub decor_lr: f64,
    pub batch_size: usize,
    pub decorrelated: bool,
    pub seeds: usize,
    pub mean_return: Option<f64>,
    pub stderr_return: Option<f64>,
    pub mean_final_d_total: Option<f64>,
}

pub struct SweepOutput {
    pub runs: Vec<RunRow>,
    pub cells: Vec<CellRow>,
}

/// Runs every cell with seeds `config.seed .. config.seed + seeds`, each in
/// its own directory under `out_dir/runs`, then writes `runs.csv` and
/// `sweep.csv`.
pub fn run_sweep(config: &RunConfig, seeds: usize, out_dir: &Path) -> Result<SweepOutput> {
    config.validate()?;
    if seeds == 0 {
        bail!("invalid value for `seeds`: need at least one seed");
    }
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("config.toml"), config.to_toml_string()?)?;
    let mut runs = Vec::new();
    let mut cells = Vec::new();
    for (idx, cell) in grid(config).into_iter().enumerate() {
        let mut returns = Vec::new();
        let mut d_totals = Vec::new();
        for s in 0..seeds as u64 {
            let seed = config.seed + s;
            let run_config = cell.apply(config, seed);
            let dir = out_dir
                .join("runs")
                .join(format!("cell{idx:03}_seed{seed}"));
            let summary = run_training(&run_config, &dir)?;
            returns.extend(summary.final_return);
            d_totals.extend(summary.final_d_total);
            runs.push(RunRow {
                cell: idx,
                sac_lr: cell.sac_lr,
                decor_lr: cell.decor_lr,
                batch_size: cell.batch_size,
                seed,
                final_return: summary.final_return,
                final_d_total: summary.final_d_total,
                wall_clock_seconds: summary.wall_clock_seconds,
            });
        }
        let (mean_return, stderr_return) = if returns.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_stderr(&returns);
            (Some(m), Some(s))
        };
        cells.push(CellRow {
            sac_lr: cell.sac_lr,
            decor_lr: cell.decor_lr,
            batch_size: cell.batch_size,
            decorrelated: cell.decor_lr > 0.0,
            seeds,
            mean_return,
            stderr_return,
            mean_final_d_total: (!d_totals.is_empty()).then(|| mean_stderr(&d_totals).0),
        });
    }
    write_rows(&out_dir.join("runs.csv"), &runs)?;
    write_rows(&out_dir.join("sweep.csv"), &cells)?;
    Ok(SweepOutput { runs, cells })
}

fn write_rows<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
