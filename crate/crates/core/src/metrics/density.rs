use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::{ModuleKind, ParamSet};
use crate::unlearn::SelectionMask;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub module_kind: ModuleKind,
    pub layer_index: Option<usize>,
    pub selected: usize,
    pub total: usize,
    pub density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskDensityReport {
    /// One row per (module kind, layer) pair present in the model.
    pub rows: Vec<DensityRow>,
    pub by_kind: Vec<DensityRow>,
    /// Transformer blocks only; parameters outside any block are in `by_kind`.
    pub by_layer: Vec<(usize, usize, usize, f64)>,
}

fn row(kind: ModuleKind, layer: Option<usize>, selected: usize, total: usize) -> DensityRow {
    DensityRow {
        module_kind: kind,
        layer_index: layer,
        selected,
        total,
        density: selected as f64 / total as f64,
    }
}

pub fn mask_density_report(mask: &SelectionMask, params: &ParamSet) -> Result<MaskDensityReport> {
    params.check_len(mask.len())?;
    let mut cells: BTreeMap<(usize, Option<usize>), (usize, usize)> = BTreeMap::new();
    let kind_pos = |k: ModuleKind| ModuleKind::ALL.iter().position(|x| *x == k).expect("known kind");
    for e in params.entries() {
        let selected = mask.bits[e.range()].iter().filter(|b| **b).count();
        let cell = cells.entry((kind_pos(e.kind), e.layer)).or_default();
        cell.0 += selected;
        cell.1 += e.tensor.numel();
    }
    let rows: Vec<DensityRow> = cells
        .iter()
        .map(|(&(k, l), &(s, t))| row(ModuleKind::ALL[k], l, s, t))
        .collect();

    let mut kinds: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut layers: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&(k, l), &(s, t)) in &cells {
        let c = kinds.entry(k).or_default();
        c.0 += s;
        c.1 += t;
        if let Some(l) = l {
            let c = layers.entry(l).or_default();
            c.0 += s;
            c.1 += t;
        }
    }
    Ok(MaskDensityReport {
        rows,
        by_kind: kinds.into_iter().map(|(k, (s, t))| row(ModuleKind::ALL[k], None, s, t)).collect(),
        by_layer: layers
            .into_iter()
            .map(|(l, (s, t))| (l, s, t, s as f64 / t as f64))
            .collect(),
    })
}

impl MaskDensityReport {
    pub fn selected(&self) -> usize {
        self.rows.iter().map(|r| r.selected).sum()
    }

    /// `module_kind,layer_index,selected,total,density`, one line per row;
    /// parameters outside transformer blocks have an empty layer index.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("module_kind,layer_index,selected,total,density\n");
        for r in &self.rows {
            let layer = r.layer_index.map(|l| l.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{layer},{},{},{:.6}\n", r.module_kind, r.selected, r.total, r.density));
        }
        out
    }
}
