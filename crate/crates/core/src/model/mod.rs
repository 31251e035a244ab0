//! Decoder-only pre-norm transformer with a gated feed-forward block.
//!
//! Every block is `x + Attn(LN(x))` followed by `x + Down(GELU(Gate(LN(x))) ⊙ Up(LN(x)))`;
//! logits come from an untied head after a final layer norm. Weight matrices
//! are stored `[in, out]` so a row of activations multiplies on the left.

mod checkpoint;
mod config;
mod generate;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use generate::{generate, next_token_logits, sequence_log_prob, token_log_probs};
pub use train::{train, EpochLoss, TrainLog, TrainOptions};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::params::{ModuleKind, ParamSet};
use crate::tensor::{Graph, Tensor, Var};

const INIT_STD: f64 = 0.02;
/// Entries per transformer block in the parameter registry.
const BLOCK_ENTRIES: usize = 11;

/// A transformer: architecture plus its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamSet,
}

/// Token sequence whose tokens from `target_start` on are prediction targets.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Sequence {
    pub tokens: Vec<usize>,
    pub target_start: usize,
}

impl Sequence {
    pub fn new(tokens: Vec<usize>, target_start: usize) -> Result<Self> {
        if target_start == 0 || target_start >= tokens.len() {
            return Err(Error::contract(format!(
                "target span starting at {target_start} in a sequence of {} tokens",
                tokens.len()
            )));
        }
        Ok(Self {
            tokens,
            target_start,
        })
    }

    /// Concatenates a prompt and its answer; the answer is the target span.
    pub fn from_parts(prompt: &[usize], answer: &[usize]) -> Result<Self> {
        let mut tokens = prompt.to_vec();
        tokens.extend_from_slice(answer);
        Self::new(tokens, prompt.len())
    }

    pub fn n_targets(&self) -> usize {
        self.tokens.len() - self.target_start
    }

    pub fn answer(&self) -> &[usize] {
        &self.tokens[self.target_start..]
    }

    /// Next-token targets for input positions `0..len-1`; prompt positions are masked.
    pub(crate) fn targets(&self) -> Vec<Option<usize>> {
        (1..self.tokens.len())
            .map(|p| (p >= self.target_start).then(|| self.tokens[p]))
            .collect()
    }
}

impl Model {
    /// Deterministic initialization from `config.seed`.
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (v, c, d, f) = (
            config.vocab_size,
            config.context_len,
            config.d_model,
            config.d_ff,
        );
        let resid_std = INIT_STD / ((2 * config.n_layers) as f64).sqrt();
        let mut params = ParamSet::new();
        let mut normal = |shape: Vec<usize>, std: f64| -> Result<Tensor> {
            let dist = Normal::new(0.0, std).map_err(|e| Error::config(e.to_string()))?;
            let n = shape.iter().product();
            let data = (0..n).map(|_| dist.sample(&mut rng)).collect();
            Tensor::param(shape, data)
        };
        let ones = |n: usize| Tensor::param(vec![n], vec![1.0; n]);
        let zeros = |n: usize| Tensor::param(vec![n], vec![0.0; n]);

        params.push("tok_emb", ModuleKind::Embedding, None, normal(vec![v, d], INIT_STD)?)?;
        params.push("pos_emb", ModuleKind::Embedding, None, normal(vec![c, d], INIT_STD)?)?;
        for l in 0..config.n_layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            let layer = Some(l);
            params.push(p("attn_norm.gain"), ModuleKind::Norm, layer, ones(d)?)?;
            params.push(p("attn_norm.bias"), ModuleKind::Norm, layer, zeros(d)?)?;
            params.push(p("attn.q"), ModuleKind::AttnQ, layer, normal(vec![d, d], INIT_STD)?)?;
            params.push(p("attn.k"), ModuleKind::AttnK, layer, normal(vec![d, d], INIT_STD)?)?;
            params.push(p("attn.v"), ModuleKind::AttnV, layer, normal(vec![d, d], INIT_STD)?)?;
            params.push(p("attn.o"), ModuleKind::AttnO, layer, normal(vec![d, d], resid_std)?)?;
            params.push(p("ffn_norm.gain"), ModuleKind::Norm, layer, ones(d)?)?;
            params.push(p("ffn_norm.bias"), ModuleKind::Norm, layer, zeros(d)?)?;
            params.push(p("ffn.up"), ModuleKind::FfnUp, layer, normal(vec![d, f], INIT_STD)?)?;
            params.push(p("ffn.gate"), ModuleKind::FfnGate, layer, normal(vec![d, f], INIT_STD)?)?;
            params.push(p("ffn.down"), ModuleKind::FfnDown, layer, normal(vec![f, d], resid_std)?)?;
        }
        params.push("final_norm.gain", ModuleKind::Norm, None, ones(d)?)?;
        params.push("final_norm.bias", ModuleKind::Norm, None, zeros(d)?)?;
        params.push("lm_head", ModuleKind::LmHead, None, normal(vec![d, v], INIT_STD)?)?;
        debug_assert_eq!(params.total_count(), config.param_count());
        Ok(Self { config, params })
    }

    /// Pairs a configuration with externally produced parameters after
    /// checking they have the layout `build` would produce.
    pub fn from_parts(config: ModelConfig, params: ParamSet) -> Result<Self> {
        let reference = Model::build(ModelConfig {
            seed: 0,
            ..config.clone()
        })?;
        if !reference.params.same_layout(&params) {
            return Err(Error::contract(
                "parameter layout does not match the model configuration",
            ));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::contract("empty token sequence"));
        }
        if tokens.len() > self.config.context_len {
            return Err(Error::contract(format!(
                "sequence of {} tokens exceeds context length {}",
                tokens.len(),
                self.config.context_len
            )));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::contract(format!(
                "token id {t} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Adds every parameter to `g` as a leaf, in registry order.
    pub(crate) fn bind<'a>(&'a self, g: &mut Graph<'a>, trainable: bool) -> Vec<Var> {
        self.params
            .entries()
            .iter()
            .map(|e| {
                if trainable {
                    g.leaf(&e.tensor)
                } else {
                    g.frozen(&e.tensor)
                }
            })
            .collect()
    }

    /// Logits `[rows, vocab]` for `tokens`; with `last_only` just the final row.
    pub(crate) fn forward(
        &self,
        g: &mut Graph<'_>,
        w: &[Var],
        tokens: &[usize],
        last_only: bool,
    ) -> Result<Var> {
        self.check_tokens(tokens)?;
        let cfg = &self.config;
        let t = tokens.len();
        let positions: Vec<usize> = (0..t).collect();
        let tok = g.embedding(w[0], tokens)?;
        let pos = g.embedding(w[1], &positions)?;
        let mut x = g.add(tok, pos)?;
        let dh = cfg.head_dim();
        let attn_scale = 1.0 / (dh as f64).sqrt();

        for l in 0..cfg.n_layers {
            let b = 2 + l * BLOCK_ENTRIES;
            let h = g.layer_norm(x, w[b], w[b + 1])?;
            let q = g.matmul(h, w[b + 2])?;
            let k = g.matmul(h, w[b + 3])?;
            let v = g.matmul(h, w[b + 4])?;
            let mut heads = Vec::with_capacity(cfg.n_heads);
            for head in 0..cfg.n_heads {
                let qh = g.slice_cols(q, head * dh, dh)?;
                let kh = g.slice_cols(k, head * dh, dh)?;
                let vh = g.slice_cols(v, head * dh, dh)?;
                let kt = g.transpose(kh)?;
                let scores = g.matmul(qh, kt)?;
                let scores = g.scale(scores, attn_scale)?;
                let probs = g.causal_softmax(scores)?;
                heads.push(g.matmul(probs, vh)?);
            }
            let cat = g.concat_cols(&heads)?;
            let attn = g.matmul(cat, w[b + 5])?;
            x = g.add(x, attn)?;

            let h = g.layer_norm(x, w[b + 6], w[b + 7])?;
            let up = g.matmul(h, w[b + 8])?;
            let gate = g.matmul(h, w[b + 9])?;
            let act = g.gelu(gate)?;
            let inner = g.mul(act, up)?;
            let down = g.matmul(inner, w[b + 10])?;
            x = g.add(x, down)?;
        }
        let f = 2 + cfg.n_layers * BLOCK_ENTRIES;
        if last_only {
            x = g.slice_rows(x, t - 1, 1)?;
        }
        let h = g.layer_norm(x, w[f], w[f + 1])?;
        g.matmul(h, w[f + 2])
    }

    /// Summed answer-span cross-entropy of one sequence (forward only).
    pub fn sequence_ce_sum(&self, seq: &Sequence) -> Result<f64> {
        self.check_tokens(&seq.tokens)?;
        let mut g = Graph::new();
        let w = self.bind(&mut g, false);
        let logits = self.forward(&mut g, &w, &seq.tokens[..seq.tokens.len() - 1], false)?;
        let ce = g.cross_entropy_sum(logits, &seq.targets())?;
        g.scalar(ce)
    }

    /// Builds one graph for `seq`, maps its summed answer cross-entropy through
    /// `objective`, and adds the objective's gradient into `grad`. Returns the
    /// objective value.
    pub fn accumulate_objective<F>(&self, seq: &Sequence, grad: &mut [f64], objective: F) -> Result<f64>
    where
        F: FnOnce(&mut Graph<'_>, Var) -> Result<Var>,
    {
        self.params.check_len(grad.len())?;
        self.check_tokens(&seq.tokens)?;
        let mut g = Graph::new();
        let w = self.bind(&mut g, true);
        let logits = self.forward(&mut g, &w, &seq.tokens[..seq.tokens.len() - 1], false)?;
        let ce = g.cross_entropy_sum(logits, &seq.targets())?;
        let out = objective(&mut g, ce)?;
        let value = g.scalar(out)?;
        let mut grads = g.backward(out)?;
        for (entry, &var) in self.params.entries().iter().zip(&w) {
            if let Some(gv) = grads.take(var) {
                grad[entry.range()]
                    .iter_mut()
                    .zip(&gv)
                    .for_each(|(a, b)| *a += b);
            }
        }
        Ok(value)
    }

    /// Mean next-token cross-entropy over all answer-span tokens of `batch`.
    pub fn batch_loss(&self, batch: &[Sequence]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::contract("batch loss of an empty batch"));
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for seq in batch {
            sum += self.sequence_ce_sum(seq)?;
            count += seq.n_targets();
        }
        Ok(sum / count as f64)
    }

    /// Mean answer-span cross-entropy and its gradient over the flattened parameters.
    pub fn batch_loss_grad(&self, batch: &[Sequence]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::contract("batch loss of an empty batch"));
        }
        let count: usize = batch.iter().map(Sequence::n_targets).sum();
        let scale = 1.0 / count as f64;
        let mut grad = vec![0.0; self.params.total_count()];
        let mut value = 0.0;
        for seq in batch {
            value += self.accumulate_objective(seq, &mut grad, |g, ce| g.scale(ce, scale))?;
        }
        Ok((value, grad))
    }
}
