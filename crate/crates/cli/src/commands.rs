//! The `train`, `unlearn`, `sweep` and `report` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use grinlab::unlearn::MaskOrigin;

use crate::config::{load_config, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::report::{write_report, Report};
use crate::runner::{
    ensure_base, load_base, read_external_mask, run_cell, write_run, Base, RunResult, TrainRecord,
};
use crate::sweep::{comparison_csv, fraction_sweep_csv, run_grid, timing_csv, SweepOutcome};

fn output_dir(cfg: &ExperimentConfig, out: Option<&Path>) -> PathBuf {
    out.map_or_else(|| cfg.output_dir.clone(), Path::to_path_buf)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Trains (or reuses) the base model in `out` and returns its training record.
pub fn train(config: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<TrainRecord> {
    let mut cfg = load_config(config)?;
    if let Some(seed) = seed {
        cfg.model.seed = seed;
        cfg.train.seed = seed;
    }
    let dir = output_dir(&cfg, out);
    ensure_base(&cfg, &dir)?;
    let path = dir.join("train_log.json");
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json { path, source })
}

fn base_for(cfg: &ExperimentConfig, dir: &Path, checkpoint: Option<&Path>) -> Result<Base> {
    match checkpoint {
        Some(ckpt) => load_base(cfg, ckpt),
        None => ensure_base(cfg, dir),
    }
}

/// One unlearning run of the `unlearn` section. A mask file switches the
/// origin to `external`.
pub fn unlearn(
    config: &Path,
    checkpoint: Option<&Path>,
    out: Option<&Path>,
    seed: Option<u64>,
    mask_file: Option<&Path>,
) -> Result<(RunResult, PathBuf)> {
    let mut cfg = load_config(config)?;
    if let Some(seed) = seed {
        cfg.unlearn.seed = seed;
    }
    let external = mask_file.map(read_external_mask).transpose()?;
    if external.is_some() {
        cfg.unlearn.origin = MaskOrigin::External;
    }
    cfg.unlearn.validate()?;
    let dir = output_dir(&cfg, out);
    let base = base_for(&cfg, &dir, checkpoint)?;
    let (result, mask) = run_cell(&base, &cfg.unlearn, external.as_ref())?;
    let run_dir = write_run(&dir, &result, &mask)?;
    Ok((result, run_dir))
}

/// Runs the declared grid over every seed and writes `comparison.csv`,
/// `fraction_sweep.csv` and `timing.csv` into the output directory.
pub fn sweep(config: &Path, checkpoint: Option<&Path>, out: Option<&Path>, seed: Option<u64>, threads: usize) -> Result<SweepOutcome> {
    let mut cfg = load_config(config)?;
    if cfg.sweep.is_none() {
        return Err(CliError::Config("sweep: missing section".into()));
    }
    if let Some(seed) = seed {
        cfg.seeds = vec![seed];
    }
    let dir = output_dir(&cfg, out);
    let base = base_for(&cfg, &dir, checkpoint)?;
    let outcome = run_grid(&base, &cfg.cells(), &cfg.seeds, Some(&dir), threads)?;
    write_text(&dir.join("comparison.csv"), &comparison_csv(&base.pre, &outcome.cells))?;
    write_text(&dir.join("fraction_sweep.csv"), &fraction_sweep_csv(&outcome.cells))?;
    write_text(&dir.join("timing.csv"), &timing_csv(&outcome.cells))?;
    Ok(outcome)
}

pub fn report(dir: &Path) -> Result<Report> {
    write_report(dir)
}
