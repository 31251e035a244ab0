//! Adam with decoupled weight decay, optionally restricted to a coordinate mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;

/// First and second moment estimates aligned to the flattened parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    /// Fresh state with betas (0.9, 0.999) and eps 1e-8.
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One AdamW step. Coordinates whose mask bit is false keep both their value
/// and their moments untouched.
pub fn adamw_step(
    params: &mut ParamSet,
    grads: &[f64],
    mask: Option<&[bool]>,
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    let n = params.total_count();
    if grads.len() != n || state.len() != n || mask.is_some_and(|m| m.len() != n) {
        return Err(Error::contract(format!(
            "optimizer step over {n} parameters with gradient {}, state {} and mask {:?}",
            grads.len(),
            state.len(),
            mask.map(<[bool]>::len)
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let OptimizerState { m, v, .. } = state;
    for (offset, chunk) in params.chunks_mut() {
        for (j, theta) in chunk.iter_mut().enumerate() {
            let i = offset + j;
            if let Some(mask) = mask {
                if !mask[i] {
                    continue;
                }
            }
            let g = grads[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *theta -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * *theta);
        }
    }
    Ok(())
}
