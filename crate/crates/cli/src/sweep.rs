//! Grid sweeps: every cell times every seed, cached by fingerprint, then
//! averaged per cell.

use std::path::Path;

use grinlab::data::Split;
use grinlab::metrics::MetricsReport;
use grinlab::unlearn::{LossKind, MaskOrigin, UnlearnConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::runner::{cached_run, method_label, run_cell, run_fingerprint, write_run, Base, RunResult, SPLITS};

/// The five table metrics of one split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TableMetrics {
    pub one_minus_tr: f64,
    pub kc: f64,
    pub rouge: f64,
    pub k_acc: f64,
    pub c_acc: f64,
}

impl From<&MetricsReport> for TableMetrics {
    fn from(r: &MetricsReport) -> Self {
        Self {
            one_minus_tr: r.one_minus_truth_ratio,
            kc: r.keyword_confidence,
            rouge: r.rouge_l_recall,
            k_acc: r.keyword_accuracy,
            c_acc: r.cosine_accuracy,
        }
    }
}

impl TableMetrics {
    fn mean(rows: &[TableMetrics]) -> Self {
        let n = rows.len() as f64;
        let avg = |f: fn(&TableMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Self {
            one_minus_tr: avg(|m| m.one_minus_tr),
            kc: avg(|m| m.kc),
            rouge: avg(|m| m.rouge),
            k_acc: avg(|m| m.k_acc),
            c_acc: avg(|m| m.c_acc),
        }
    }

    fn csv(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.one_minus_tr, self.kc, self.rouge, self.k_acc, self.c_acc
        )
    }
}

/// Seed-averaged results of one grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: String,
    pub loss_kind: LossKind,
    pub origin: MaskOrigin,
    pub p_fraction: f64,
    pub noise_sigma: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    /// Post-unlearning metrics in forget, retain, world order.
    pub metrics: [TableMetrics; 3],
    pub mask_seconds: f64,
    pub unlearn_seconds: f64,
    pub run_ids: Vec<String>,
    /// `seed: message` for every run of this cell that failed.
    pub failures: Vec<String>,
}

impl CellSummary {
    pub fn split(&self, split: Split) -> &TableMetrics {
        &self.metrics[SPLITS.iter().position(|s| *s == split).expect("known split")]
    }
}

/// Averages the successful runs of one cell.
pub fn summarize(cell: &UnlearnConfig, runs: &[RunResult], failures: Vec<String>) -> CellSummary {
    let metrics = SPLITS.map(|s| {
        let rows: Vec<TableMetrics> = runs.iter().map(|r| r.report(s, true).into()).collect();
        if rows.is_empty() {
            TableMetrics {
                one_minus_tr: f64::NAN,
                kc: f64::NAN,
                rouge: f64::NAN,
                k_acc: f64::NAN,
                c_acc: f64::NAN,
            }
        } else {
            TableMetrics::mean(&rows)
        }
    });
    let n = runs.len().max(1) as f64;
    CellSummary {
        method: method_label(cell.origin, cell.noise_sigma),
        loss_kind: cell.loss_kind,
        origin: cell.origin,
        p_fraction: cell.p_fraction,
        noise_sigma: cell.noise_sigma,
        lr: cell.lr,
        epochs: cell.epochs,
        seeds: runs.iter().map(|r| r.config.seed).collect(),
        metrics,
        mask_seconds: runs.iter().map(|r| r.mask_seconds).sum::<f64>() / n,
        unlearn_seconds: runs.iter().map(|r| r.unlearn_seconds).sum::<f64>() / n,
        run_ids: runs.iter().map(|r| r.run_id.clone()).collect(),
        failures,
    }
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub cells: Vec<CellSummary>,
    pub runs: Vec<RunResult>,
    /// Runs taken from the cache instead of recomputed.
    pub reused: usize,
}

/// Runs each cell for each seed on a pool of `threads` workers. With `out`
/// set, results are cached under `out/runs/<run_id>/` and reused when
/// the fingerprint matches. Failed runs are recorded and the sweep goes on.
pub fn run_grid(base: &Base, cells: &[UnlearnConfig], seeds: &[u64], out: Option<&Path>, threads: usize) -> Result<SweepOutcome> {
    let jobs: Vec<(usize, UnlearnConfig)> = cells
        .iter()
        .enumerate()
        .flat_map(|(c, cell)| seeds.iter().map(move |&seed| (c, UnlearnConfig { seed, ..cell.clone() })))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    type Finished = (usize, u64, Result<(RunResult, bool)>);
    let finished: Vec<Finished> = pool.install(|| {
        jobs.par_iter()
            .map(|(c, cfg)| {
                let fp = run_fingerprint(base, cfg, None);
                if let Some(hit) = out.and_then(|o| cached_run(o, cfg, &fp)) {
                    return (*c, cfg.seed, Ok((hit, true)));
                }
                let res = run_cell(base, cfg, None).and_then(|(result, mask)| {
                    if let Some(o) = out {
                        write_run(o, &result, &mask)?;
                    }
                    Ok((result, false))
                });
                (*c, cfg.seed, res)
            })
            .collect()
    });

    let mut per_cell: Vec<(Vec<RunResult>, Vec<String>)> = vec![(Vec::new(), Vec::new()); cells.len()];
    let mut reused = 0;
    let mut runs = Vec::new();
    for (c, seed, res) in finished {
        match res {
            Ok((r, hit)) => {
                reused += usize::from(hit);
                per_cell[c].0.push(r.clone());
                runs.push(r);
            }
            Err(e) => per_cell[c].1.push(format!("{seed}: {e}")),
        }
    }
    let summaries = cells
        .iter()
        .zip(per_cell)
        .map(|(cell, (rs, fails))| summarize(cell, &rs, fails))
        .collect();
    Ok(SweepOutcome {
        cells: summaries,
        runs,
        reused,
    })
}

fn split_headers() -> String {
    SPLITS
        .iter()
        .flat_map(|s| ["1-TR", "KC", "Rouge", "K-Acc", "C-Acc"].map(|m| format!("{s}_{m}")))
        .collect::<Vec<_>>()
        .join(",")
}

/// Table-shaped comparison: an `Original` row with the pre-unlearning
/// metrics, then one row per cell. Timing lives in [`timing_csv`] so this
/// file is byte-identical across repeated sweeps.
pub fn comparison_csv(pre: &[MetricsReport], cells: &[CellSummary]) -> String {
    let mut out = format!("method,loss_kind,origin,p_fraction,noise_sigma,lr,epochs,n_seeds,{},failures\n", split_headers());
    let original: Vec<String> = SPLITS
        .iter()
        .map(|s| TableMetrics::from(pre.iter().find(|r| r.split == *s).expect("every split is evaluated")).csv())
        .collect();
    out.push_str(&format!("Original,,,,,,,0,{},0\n", original.join(",")));
    for c in cells {
        let m: Vec<String> = c.metrics.iter().map(TableMetrics::csv).collect();
        out.push_str(&format!(
            "{},{},{},{},{},{:e},{},{},{},{}\n",
            c.method,
            c.loss_kind,
            c.origin,
            c.p_fraction,
            c.noise_sigma,
            c.lr,
            c.epochs,
            c.seeds.len(),
            m.join(","),
            c.failures.len()
        ));
    }
    out
}

/// Forget and retain keyword accuracy against the mask fraction.
pub fn fraction_sweep_csv(cells: &[CellSummary]) -> String {
    let mut out = String::from("method,origin,loss_kind,noise_sigma,lr,epochs,p_fraction,forget_k_acc,retain_k_acc\n");
    let mut rows: Vec<&CellSummary> = cells.iter().collect();
    rows.sort_by(|a, b| {
        (a.origin.as_str(), a.loss_kind.as_str())
            .cmp(&(b.origin.as_str(), b.loss_kind.as_str()))
            .then(a.noise_sigma.total_cmp(&b.noise_sigma))
            .then(a.lr.total_cmp(&b.lr))
            .then(a.epochs.cmp(&b.epochs))
            .then(a.p_fraction.total_cmp(&b.p_fraction))
    });
    for c in rows {
        out.push_str(&format!(
            "{},{},{},{},{:e},{},{},{:.6},{:.6}\n",
            c.method,
            c.origin,
            c.loss_kind,
            c.noise_sigma,
            c.lr,
            c.epochs,
            c.p_fraction,
            c.split(Split::Forget).k_acc,
            c.split(Split::Retain).k_acc
        ));
    }
    out
}

/// Seed-averaged wall time in seconds.
pub fn timing_csv(cells: &[CellSummary]) -> String {
    let mut out = String::from("method,loss_kind,p_fraction,noise_sigma,lr,epochs,mask_seconds,unlearn_seconds,mask_share\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{},{:e},{},{:.4},{:.4},{:.4}\n",
            c.method,
            c.loss_kind,
            c.p_fraction,
            c.noise_sigma,
            c.lr,
            c.epochs,
            c.mask_seconds,
            c.unlearn_seconds,
            c.mask_seconds / c.unlearn_seconds
        ));
    }
    out
}
