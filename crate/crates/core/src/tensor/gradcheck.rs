use crate::error::{Error, Result};
use crate::params::ParamSet;

/// Central-difference gradient estimate `(L(θ+h·eᵢ) − L(θ−h·eᵢ)) / 2h` for
/// every coordinate of `params`.
pub fn finite_diff_grad<F>(loss: F, params: &ParamSet, step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    stencil(loss, params, step, &[(1.0, 0.5)])
}

/// Five-point central stencil
/// `(−L(θ+2h) + 8L(θ+h) − 8L(θ−h) + L(θ−2h)) / 12h`.
///
/// Truncation error is O(h⁴), so a step around 1e-3 keeps both truncation
/// and roundoff well below what the two-point rule reaches.
pub fn finite_diff_grad_5pt<F>(loss: F, params: &ParamSet, step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    stencil(loss, params, step, &[(1.0, 8.0 / 12.0), (2.0, -1.0 / 12.0)])
}

/// `Σ_k w_k (L(θ + a_k h) − L(θ − a_k h)) / h` over `(a_k, w_k)` pairs.
fn stencil<F>(mut loss: F, params: &ParamSet, step: f64, taps: &[(f64, f64)]) -> Result<Vec<f64>>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::contract(format!("finite-difference step must be positive, got {step}")));
    }
    let mut probe = params.clone();
    let n = params.total_count();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let orig = probe.get(i).expect("index within total_count");
        let mut acc = 0.0;
        for &(a, w) in taps {
            probe.set(i, orig + a * step)?;
            let plus = loss(&probe)?;
            probe.set(i, orig - a * step)?;
            let minus = loss(&probe)?;
            if !plus.is_finite() || !minus.is_finite() {
                probe.set(i, orig)?;
                return Err(Error::numeric(format!(
                    "loss not finite while perturbing coordinate {i}"
                )));
            }
            acc += w * (plus - minus);
        }
        probe.set(i, orig)?;
        out.push(acc / step);
    }
    Ok(out)
}

/// `max_i |a_i − b_i| / (|b_i| + 1e-8)` where `b` is the reference.
pub fn max_relative_error(actual: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(actual.len(), reference.len());
    actual
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).abs() / (b.abs() + 1e-8))
        .fold(0.0, f64::max)
}
