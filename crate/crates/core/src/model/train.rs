use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Model, Sequence};
use crate::error::{Error, Result};
use crate::optim::{adamw_step, OptimizerState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Sequences per micro-batch.
    pub batch_size: usize,
    /// Micro-batches accumulated into one optimizer step.
    pub grad_accum: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 3e-3,
            weight_decay: 0.1,
            batch_size: 8,
            grad_accum: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Token-weighted mean answer loss seen during the epoch, before each update.
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epochs: Vec<EpochLoss>,
    pub steps: usize,
}

/// AdamW training on the answer-span loss.
///
/// One optimizer step covers `batch_size * grad_accum` sequences; the step
/// gradient is normalized by the total number of target tokens in that
/// window, so accumulating four micro-batches of 8 is the same step as one
/// batch of 32.
pub fn train(model: &mut Model, data: &[Sequence], opts: &TrainOptions) -> Result<TrainLog> {
    if data.is_empty() {
        return Err(Error::contract("training on an empty dataset"));
    }
    if opts.batch_size == 0 || opts.grad_accum == 0 {
        return Err(Error::config("batch_size and grad_accum must be positive"));
    }
    let initial_loss = model.batch_loss(data)?;
    let mut log = TrainLog {
        initial_loss,
        ..TrainLog::default()
    };
    let n = model.params().total_count();
    let mut state = OptimizerState::new(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let window = opts.batch_size * opts.grad_accum;
    let mut grad = vec![0.0; n];

    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut epoch_tokens = 0usize;
        for step_ids in order.chunks(window) {
            let tokens: usize = step_ids.iter().map(|&i| data[i].n_targets()).sum();
            let scale = 1.0 / tokens as f64;
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut value = 0.0;
            for micro in step_ids.chunks(opts.batch_size) {
                for &i in micro {
                    value += model.accumulate_objective(&data[i], &mut grad, |g, ce| g.scale(ce, scale))?;
                }
            }
            if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    message: format!("non-finite loss {value}"),
                });
            }
            epoch_sum += value * tokens as f64;
            epoch_tokens += tokens;
            adamw_step(model.params_mut(), &grad, None, &mut state, opts.lr, opts.weight_decay)?;
            log.steps += 1;
        }
        log.epochs.push(EpochLoss {
            epoch,
            loss: epoch_sum / epoch_tokens as f64,
        });
    }
    log.final_loss = model.batch_loss(data)?;
    if !log.final_loss.is_finite() {
        return Err(Error::Training {
            epoch: opts.epochs.saturating_sub(1),
            message: "non-finite loss after training".into(),
        });
    }
    Ok(log)
}
