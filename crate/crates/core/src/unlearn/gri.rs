use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-parameter influence scores `|G_f| / (|G_r| + ε)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceScores {
    pub scores: Vec<f64>,
    pub epsilon: f64,
    pub k_percentile: f64,
}

/// Nearest-rank percentile of `|values|`: the element at index
/// `ceil(k/100 * n) - 1` after an ascending sort.
pub fn percentile_abs(values: &[f64], k: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::contract("percentile of an empty vector"));
    }
    if !(k > 0.0 && k < 100.0) {
        return Err(Error::contract(format!("percentile rank must lie in (0, 100), got {k}")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::numeric("percentile over NaN values"));
    }
    let mut abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let rank = ((k / 100.0) * abs.len() as f64).ceil() as usize;
    let idx = rank.clamp(1, abs.len()) - 1;
    let (_, nth, _) = abs.select_nth_unstable_by(idx, f64::total_cmp);
    Ok(*nth)
}

/// Gradient-ratio influence scores with ε the k-th percentile of `|G_r|`.
///
/// When more than k percent of `G_r` is exactly zero the percentile is zero;
/// ε then falls back to the smallest nonzero `|G_r|` so that every score stays
/// finite.
pub fn gri_scores(g_forget: &[f64], g_retain: &[f64], k: f64) -> Result<InfluenceScores> {
    if g_forget.len() != g_retain.len() {
        return Err(Error::contract(format!(
            "forget gradient has {} entries, retain gradient {}",
            g_forget.len(),
            g_retain.len()
        )));
    }
    let mut epsilon = percentile_abs(g_retain, k)?;
    if epsilon == 0.0 {
        epsilon = g_retain
            .iter()
            .map(|g| g.abs())
            .filter(|g| *g > 0.0)
            .fold(f64::INFINITY, f64::min);
        if !epsilon.is_finite() {
            return Err(Error::numeric("retain gradient is identically zero"));
        }
    }
    let scores: Vec<f64> = g_forget
        .iter()
        .zip(g_retain)
        .map(|(f, r)| f.abs() / (r.abs() + epsilon))
        .collect();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::numeric("non-finite influence score"));
    }
    Ok(InfluenceScores {
        scores,
        epsilon,
        k_percentile: k,
    })
}
