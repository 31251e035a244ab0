//! Summaries over stored run results.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use grinlab::data::Split;
use grinlab::unlearn::UnlearnConfig;
use serde::Serialize;

use crate::config::fingerprint;
use crate::error::{CliError, Result};
use crate::runner::{read_result, RunResult};
use crate::sweep::{summarize, timing_csv, CellSummary};

/// Every `result.json` under `dir/runs/*/` (or `dir/*/`), ordered by run id.
pub fn load_results(dir: &Path) -> Result<Vec<RunResult>> {
    let runs = dir.join("runs");
    let root = if runs.is_dir() { runs } else { dir.to_path_buf() };
    let entries = fs::read_dir(&root).map_err(|e| CliError::io(&root, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(&root, e))?.path().join("result.json");
        if path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    let results: Vec<RunResult> = paths.iter().map(|p| read_result(p)).collect::<Result<_>>()?;
    if results.is_empty() {
        return Err(grinlab::Error::Contract(format!("no run results under {}", dir.display())).into());
    }
    Ok(results)
}

#[derive(Serialize)]
struct CellKey<'a> {
    base: &'a str,
    unlearn: UnlearnConfig,
    mask_file: Option<&'a str>,
}

/// Groups runs that differ only in their seed and averages each group.
pub fn group_cells(results: &[RunResult]) -> Vec<(CellSummary, Vec<&RunResult>)> {
    let mut groups: BTreeMap<String, Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        let key = fingerprint(&CellKey {
            base: &r.base_fingerprint,
            unlearn: UnlearnConfig { seed: 0, ..r.config.clone() },
            mask_file: r.mask_file_sha256.as_deref(),
        });
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_values()
        .map(|mut runs| {
            runs.sort_by_key(|r| r.config.seed);
            let owned: Vec<RunResult> = runs.iter().map(|r| (*r).clone()).collect();
            let mut summary = summarize(&runs[0].config, &owned, Vec::new());
            summary.method = runs[0].method.clone();
            (summary, runs)
        })
        .collect()
}

/// Forget keyword accuracy ascending, then retain keyword accuracy
/// descending, then method name.
pub fn rank(cells: &mut [(CellSummary, Vec<&RunResult>)]) {
    cells.sort_by(|(a, _), (b, _)| {
        a.split(Split::Forget)
            .k_acc
            .total_cmp(&b.split(Split::Forget).k_acc)
            .then(b.split(Split::Retain).k_acc.total_cmp(&a.split(Split::Retain).k_acc))
            .then(a.method.cmp(&b.method))
    });
}

pub fn markdown(cells: &[(CellSummary, Vec<&RunResult>)]) -> String {
    let mut out = String::from(
        "| rank | method | loss | p | sigma | lr | epochs | seeds | forget K-Acc | retain K-Acc | world K-Acc \
         | forget 1-TR | forget KC | retain Rouge | mask gen (s) | unlearning (s) |\n",
    );
    out.push_str("|---|---|---|---|---|---|---|---|---|---|---|---|---|---|---|---|\n");
    for (i, (c, _)) in cells.iter().enumerate() {
        let (f, r, w) = (c.split(Split::Forget), c.split(Split::Retain), c.split(Split::World));
        out.push_str(&format!(
            "| {} | {} | {} | {} | {:.4} | {:e} | {} | {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} |\n",
            i + 1,
            c.method,
            c.loss_kind,
            c.p_fraction,
            c.noise_sigma,
            c.lr,
            c.epochs,
            c.seeds.len(),
            f.k_acc,
            r.k_acc,
            w.k_acc,
            f.one_minus_tr,
            f.kc,
            r.rouge,
            c.mask_seconds,
            c.unlearn_seconds
        ));
    }
    out
}

/// Seed-averaged selection density per module kind, one line per cell and kind.
pub fn density_by_kind_csv(cells: &[(CellSummary, Vec<&RunResult>)]) -> String {
    let mut out = String::from("method,loss_kind,p_fraction,noise_sigma,module_kind,total,density\n");
    for (c, runs) in cells {
        for (i, row) in runs[0].density.by_kind.iter().enumerate() {
            let density = runs.iter().map(|r| r.density.by_kind[i].density).sum::<f64>() / runs.len() as f64;
            out.push_str(&format!(
                "{},{},{},{},{},{},{density:.6}\n",
                c.method, c.loss_kind, c.p_fraction, c.noise_sigma, row.module_kind, row.total
            ));
        }
    }
    out
}

/// Seed-averaged selection density per transformer block.
pub fn density_by_layer_csv(cells: &[(CellSummary, Vec<&RunResult>)]) -> String {
    let mut out = String::from("method,loss_kind,p_fraction,noise_sigma,layer_index,total,density\n");
    for (c, runs) in cells {
        for (i, &(layer, _, total, _)) in runs[0].density.by_layer.iter().enumerate() {
            let density = runs.iter().map(|r| r.density.by_layer[i].3).sum::<f64>() / runs.len() as f64;
            out.push_str(&format!(
                "{},{},{},{},{layer},{total},{density:.6}\n",
                c.method, c.loss_kind, c.p_fraction, c.noise_sigma
            ));
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct Report {
    pub markdown: String,
    pub n_runs: usize,
    pub n_cells: usize,
}

/// Writes `report.md`, `density_by_kind.csv`, `density_by_layer.csv` and
/// `timing.csv` into `dir`.
pub fn write_report(dir: &Path) -> Result<Report> {
    let results = load_results(dir)?;
    let mut cells = group_cells(&results);
    rank(&mut cells);
    let md = markdown(&cells);
    let summaries: Vec<CellSummary> = cells.iter().map(|(c, _)| c.clone()).collect();
    for (name, text) in [
        ("report.md", md.clone()),
        ("density_by_kind.csv", density_by_kind_csv(&cells)),
        ("density_by_layer.csv", density_by_layer_csv(&cells)),
        ("timing.csv", timing_csv(&summaries)),
    ] {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(Report {
        markdown: md,
        n_runs: results.len(),
        n_cells: cells.len(),
    })
}
