use crate::error::{Error, Result};
use crate::model::{Model, Sequence};

/// An unlearning objective evaluated on one step's batches.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Forget-side term before weighting: the forget cross-entropy for
    /// Grad-Diff, the refusal cross-entropy for PO, the NPO term for NPO.
    pub forget_term: f64,
    /// Retain cross-entropy, before multiplying by lambda.
    pub retain_term: f64,
}

/// Per-token mean cross-entropy and its gradient. Empty batches are rejected.
fn mean_ce(model: &Model, batch: &[Sequence], what: &str) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::contract(format!("empty {what} batch")));
    }
    model.batch_loss_grad(batch)
}

fn combine(forget: (f64, Vec<f64>), forget_sign: f64, retain: (f64, Vec<f64>), lambda: f64) -> Result<LossValue> {
    let (f, gf) = forget;
    let (r, gr) = retain;
    let value = forget_sign * f + lambda * r;
    let grad: Vec<f64> = gf.iter().zip(&gr).map(|(a, b)| forget_sign * a + lambda * b).collect();
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::numeric(format!("non-finite unlearning loss {value}")));
    }
    Ok(LossValue {
        value,
        grad,
        forget_term: f,
        retain_term: r,
    })
}

/// `−ℓ_f + λ ℓ_r` with per-token mean cross-entropies.
pub fn loss_grad_diff(model: &Model, forget: &[Sequence], retain: &[Sequence], lambda: f64) -> Result<LossValue> {
    combine(mean_ce(model, forget, "forget")?, -1.0, mean_ce(model, retain, "retain")?, lambda)
}

/// `CE(forget prompt → refusal) + λ ℓ_r`; `refusals` are forget prompts
/// paired with their refusal targets.
pub fn loss_po(model: &Model, refusals: &[Sequence], retain: &[Sequence], lambda: f64) -> Result<LossValue> {
    combine(mean_ce(model, refusals, "refusal")?, 1.0, mean_ce(model, retain, "retain")?, lambda)
}

/// `log π(answer | prompt)` for every sequence.
pub fn sequence_log_probs(model: &Model, batch: &[Sequence]) -> Result<Vec<f64>> {
    batch.iter().map(|s| Ok(-model.sequence_ce_sum(s)?)).collect()
}

/// `(2/β) · mean_i softplus(β (log π_θ(y_i|x_i) − log π_ref(y_i|x_i)))` and its gradient.
pub fn npo_term(model: &Model, forget: &[Sequence], reference: &[f64], beta: f64) -> Result<(f64, Vec<f64>)> {
    if forget.is_empty() {
        return Err(Error::contract("empty forget batch"));
    }
    if reference.len() != forget.len() {
        return Err(Error::contract(format!(
            "{} reference log-probabilities for {} forget records",
            reference.len(),
            forget.len()
        )));
    }
    if beta.is_nan() || beta <= 0.0 {
        return Err(Error::contract(format!("NPO beta must be positive, got {beta}")));
    }
    let weight = 2.0 / (beta * forget.len() as f64);
    let mut grad = vec![0.0; model.params().total_count()];
    let mut value = 0.0;
    for (seq, &ref_lp) in forget.iter().zip(reference) {
        value += model.accumulate_objective(seq, &mut grad, |g, ce| {
            // log π_θ = −ce
            let a = g.scale(ce, -beta)?;
            let b = g.offset(a, -beta * ref_lp)?;
            let s = g.softplus(b)?;
            g.scale(s, weight)
        })?;
    }
    Ok((value, grad))
}

/// NPO against precomputed reference log-probabilities, plus `λ ℓ_r`.
pub fn loss_npo_with_reference(
    model: &Model,
    reference: &[f64],
    forget: &[Sequence],
    retain: &[Sequence],
    beta: f64,
    lambda: f64,
) -> Result<LossValue> {
    combine(npo_term(model, forget, reference, beta)?, 1.0, mean_ce(model, retain, "retain")?, lambda)
}

/// NPO with the frozen reference model evaluated on the spot.
pub fn loss_npo(
    model: &Model,
    reference: &Model,
    forget: &[Sequence],
    retain: &[Sequence],
    beta: f64,
    lambda: f64,
) -> Result<LossValue> {
    if reference.config() != model.config() || !reference.params().same_layout(model.params()) {
        return Err(Error::contract("reference model does not match the trained model"));
    }
    let ref_lp = sequence_log_probs(reference, forget)?;
    loss_npo_with_reference(model, &ref_lp, forget, retain, beta, lambda)
}
