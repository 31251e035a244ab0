use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the decoder-only transformer.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub context_len: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// Desk-scale defaults: 2 layers, width 64, 4 heads, feed-forward 128.
    fn default() -> Self {
        Self {
            vocab_size: 512,
            context_len: 64,
            n_layers: 2,
            n_heads: 4,
            d_model: 64,
            d_ff: 128,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("context_len", self.context_len),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("model.{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::config(format!(
                "model.d_model ({}) must be divisible by model.n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Closed-form parameter count of the architecture.
    pub fn param_count(&self) -> usize {
        let (v, c, d, f) = (self.vocab_size, self.context_len, self.d_model, self.d_ff);
        let per_layer = 4 * d + 4 * d * d + 3 * d * f;
        v * d + c * d + self.n_layers * per_layer + 2 * d + d * v
    }
}
