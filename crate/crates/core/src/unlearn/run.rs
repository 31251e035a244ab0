use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gri::gri_scores;
use super::loss::{loss_grad_diff, loss_npo_with_reference, loss_po, sequence_log_probs, LossValue};
use super::mask::{baseline_mask, model_mask, MaskOrigin, SelectionMask};
use super::noise::inject_noise;
use super::snapshot::compute_grad_snapshot;
use crate::data::{record_sequence, refusal_sequence, QARecord, Split, Vocabulary};
use crate::error::{Error, Result, StageExt};
use crate::model::{Model, Sequence};
use crate::optim::{adamw_step, OptimizerState};
use crate::params::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    GradDiff,
    Po,
    Npo,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::GradDiff, LossKind::Po, LossKind::Npo];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::GradDiff => "grad_diff",
            LossKind::Po => "po",
            LossKind::Npo => "npo",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown loss kind `{s}`")))
    }
}

/// Which hyperparameter ranges a run is held to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// The published grids: lr in [5e-6, 5e-5], 5 or 10 epochs, p in
    /// {0.2, 0.4, 0.6, 0.8}, noise variance in {0.01, 0.001, 0.0001} or none.
    Paper,
    /// Any positive values; used for small models that need larger steps.
    #[default]
    Desk,
}

pub const P_GRID: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
pub const NOISE_VARIANCE_GRID: [f64; 3] = [0.01, 0.001, 0.0001];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnlearnConfig {
    pub loss_kind: LossKind,
    pub origin: MaskOrigin,
    pub lambda: f64,
    pub p_fraction: f64,
    /// Standard deviation of the injected noise.
    pub noise_sigma: f64,
    pub k_percentile: f64,
    pub lr: f64,
    pub epochs: usize,
    pub beta_npo: f64,
    pub weight_decay: f64,
    /// Micro-batches accumulated into one optimizer step.
    pub grad_accum: usize,
    /// Forget records per micro-batch; each is paired with one retain record.
    pub micro_batch: usize,
    pub seed: u64,
    pub regime: Regime,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        Self {
            loss_kind: LossKind::Po,
            origin: MaskOrigin::Gri,
            lambda: 1.0,
            p_fraction: 0.4,
            noise_sigma: 0.001f64.sqrt(),
            k_percentile: 5.0,
            lr: 3e-4,
            epochs: 70,
            beta_npo: 0.1,
            weight_decay: 0.1,
            grad_accum: 4,
            micro_batch: 1,
            seed: 0,
            regime: Regime::Desk,
        }
    }
}

impl UnlearnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::config(format!("unlearn.{field} {why}")));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", "must be finite and non-negative");
        }
        if !(self.p_fraction > 0.0 && self.p_fraction <= 1.0) {
            return bad("p_fraction", "must lie in (0, 1]");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma", "must be finite and non-negative");
        }
        if !(self.k_percentile > 0.0 && self.k_percentile < 100.0) {
            return bad("k_percentile", "must lie in (0, 100)");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be positive");
        }
        if !(self.beta_npo > 0.0 && self.beta_npo.is_finite()) {
            return bad("beta_npo", "must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay", "must be finite and non-negative");
        }
        if self.grad_accum == 0 {
            return bad("grad_accum", "must be positive");
        }
        if self.micro_batch == 0 {
            return bad("micro_batch", "must be positive");
        }
        if self.regime == Regime::Paper {
            if !(5e-6..=5e-5).contains(&self.lr) {
                return bad("lr", "must lie in [5e-6, 5e-5] under the paper regime");
            }
            if ![5, 10].contains(&self.epochs) {
                return bad("epochs", "must be 5 or 10 under the paper regime");
            }
            let on_grid = |v: f64, grid: &[f64]| grid.iter().any(|g| (v - g).abs() <= 1e-12 * g);
            if self.origin.has_exact_budget() && !on_grid(self.p_fraction, &P_GRID) {
                return bad("p_fraction", "must be one of 0.2, 0.4, 0.6, 0.8 under the paper regime");
            }
            let variance = self.noise_sigma * self.noise_sigma;
            if self.noise_sigma != 0.0 && !NOISE_VARIANCE_GRID.iter().any(|g| (variance - g).abs() <= 1e-9 * g) {
                return bad("noise_sigma", "must be the square root of 0.01, 0.001 or 0.0001 under the paper regime");
            }
        }
        Ok(())
    }
}

/// Token sequences for one unlearning run.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlearnData {
    pub forget: Vec<Sequence>,
    /// Forget prompts paired with refusal targets; required by PO.
    pub refusals: Option<Vec<Sequence>>,
    pub retain: Vec<Sequence>,
}

impl UnlearnData {
    /// Encodes forget and retain records. Refusal sequences are built when
    /// every forget record carries a refusal target.
    pub fn from_records(vocab: &Vocabulary, forget: &[QARecord], retain: &[QARecord]) -> Result<Self> {
        let encode = |rs: &[QARecord]| rs.iter().map(|r| record_sequence(vocab, r)).collect::<Result<Vec<_>>>();
        let refusals = if forget.iter().all(|r| r.refusal_target.is_some()) {
            Some(forget.iter().map(|r| refusal_sequence(vocab, r)).collect::<Result<Vec<_>>>()?)
        } else {
            None
        };
        Ok(Self {
            forget: encode(forget)?,
            refusals,
            retain: encode(retain)?,
        })
    }
}

/// One AdamW step restricted to the mask.
pub fn masked_step(
    params: &mut ParamSet,
    grads: &[f64],
    mask: &SelectionMask,
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    adamw_step(params, grads, Some(&mask.bits), state, lr, weight_decay)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnlearnEpoch {
    pub epoch: usize,
    /// Step-averaged objective value.
    pub loss: f64,
    pub forget_term: f64,
    pub retain_term: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnlearnLog {
    pub origin: MaskOrigin,
    pub loss_kind: LossKind,
    pub p_fraction: f64,
    pub popcount: usize,
    pub total_count: usize,
    /// Percentile floor used for the scores; GRI masks only.
    pub epsilon: Option<f64>,
    pub noise_sigma: f64,
    /// Gradient snapshots, scoring and selection.
    pub mask_seconds: f64,
    pub noise_seconds: f64,
    /// Optimizer state setup and every update epoch.
    pub unlearn_seconds: f64,
    pub steps: usize,
    pub epochs: Vec<UnlearnEpoch>,
}

#[derive(Clone, Debug)]
pub struct UnlearnOutcome {
    pub model: Model,
    pub mask: SelectionMask,
    pub log: UnlearnLog,
}

const STREAM_MASK: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_ORDER: u64 = 3;

fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rand::Rng::gen(&mut rng)
}

fn select_mask(model: &Model, data: &UnlearnData, cfg: &UnlearnConfig, external: Option<SelectionMask>) -> Result<(SelectionMask, Option<f64>)> {
    if let Some(mut mask) = external {
        model.params().check_len(mask.len())?;
        mask.origin = MaskOrigin::External;
        return Ok((mask, None));
    }
    match cfg.origin {
        MaskOrigin::External => Err(Error::contract("origin `external` needs a mask file")),
        MaskOrigin::Gri => {
            let gf = compute_grad_snapshot(model, &data.forget, Split::Forget).stage("forget gradient snapshot")?;
            let gr = compute_grad_snapshot(model, &data.retain, Split::Retain).stage("retain gradient snapshot")?;
            let scores = gri_scores(&gf.values, &gr.values, cfg.k_percentile).stage("influence scores")?;
            let mask = model_mask(&scores.scores, model.params(), cfg.p_fraction, MaskOrigin::Gri).stage("mask selection")?;
            Ok((mask, Some(scores.epsilon)))
        }
        MaskOrigin::GradMagnitude => {
            let gf = compute_grad_snapshot(model, &data.forget, Split::Forget).stage("forget gradient snapshot")?;
            let mask = baseline_mask(cfg.origin, model, Some(&gf.values), cfg.p_fraction, 0).stage("mask selection")?;
            Ok((mask, None))
        }
        kind => {
            let seed = stream_seed(cfg.seed, STREAM_MASK);
            let mask = baseline_mask(kind, model, None, cfg.p_fraction, seed).stage("mask selection")?;
            Ok((mask, None))
        }
    }
}

/// Masked unlearning from a trained model.
///
/// Order: forget/retain gradient snapshots at θ⁰, scores, mask (or the
/// configured baseline, or `external`), noise on the masked coordinates, a
/// fresh optimizer state, then `epochs` passes over the forget set. Each step
/// takes `micro_batch * grad_accum` forget records and as many retain records,
/// drawn cyclically from a shuffled retain order, and normalizes each term by
/// its own token count.
pub fn run_unlearning(
    model: &Model,
    data: &UnlearnData,
    cfg: &UnlearnConfig,
    external: Option<SelectionMask>,
) -> Result<UnlearnOutcome> {
    cfg.validate()?;
    if data.forget.is_empty() || data.retain.is_empty() {
        return Err(Error::contract("unlearning needs nonempty forget and retain sets"));
    }
    let forget_inputs: &[Sequence] = match cfg.loss_kind {
        LossKind::Po => data
            .refusals
            .as_deref()
            .ok_or_else(|| Error::contract("PO needs a refusal target on every forget record"))?,
        _ => &data.forget,
    };
    if forget_inputs.len() != data.forget.len() {
        return Err(Error::contract("refusal and forget sets differ in length"));
    }

    let t_mask = Instant::now();
    let (mask, epsilon) = select_mask(model, data, cfg, external)?;
    let mask_seconds = t_mask.elapsed().as_secs_f64();

    let t_unlearn = Instant::now();
    let reference = match cfg.loss_kind {
        LossKind::Npo => Some(sequence_log_probs(model, &data.forget).stage("reference log-probabilities")?),
        _ => None,
    };
    let unlearn_setup = t_unlearn.elapsed().as_secs_f64();

    let t_noise = Instant::now();
    let mut current = model.clone();
    inject_noise(current.params_mut(), &mask, cfg.noise_sigma, stream_seed(cfg.seed, STREAM_NOISE)).stage("noise injection")?;
    let noise_seconds = t_noise.elapsed().as_secs_f64();

    let t_loop = Instant::now();
    let mut state = OptimizerState::new(current.params().total_count());
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, STREAM_ORDER));
    let mut forget_order: Vec<usize> = (0..data.forget.len()).collect();
    let mut retain_order: Vec<usize> = (0..data.retain.len()).collect();
    retain_order.shuffle(&mut rng);
    let mut retain_pos = 0;
    let window = cfg.micro_batch * cfg.grad_accum;
    let mut log_epochs = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;

    for epoch in 0..cfg.epochs {
        forget_order.shuffle(&mut rng);
        let (mut sum, mut sum_f, mut sum_r, mut n) = (0.0, 0.0, 0.0, 0usize);
        for ids in forget_order.chunks(window) {
            let f_batch: Vec<Sequence> = ids.iter().map(|&i| forget_inputs[i].clone()).collect();
            let mut r_batch = Vec::with_capacity(ids.len());
            while r_batch.len() < ids.len() {
                if retain_pos == retain_order.len() {
                    retain_order.shuffle(&mut rng);
                    retain_pos = 0;
                }
                r_batch.push(data.retain[retain_order[retain_pos]].clone());
                retain_pos += 1;
            }
            let lv: LossValue = match cfg.loss_kind {
                LossKind::GradDiff => loss_grad_diff(&current, &f_batch, &r_batch, cfg.lambda),
                LossKind::Po => loss_po(&current, &f_batch, &r_batch, cfg.lambda),
                LossKind::Npo => {
                    let refs = reference.as_ref().expect("reference computed for NPO");
                    let r: Vec<f64> = ids.iter().map(|&i| refs[i]).collect();
                    loss_npo_with_reference(&current, &r, &f_batch, &r_batch, cfg.beta_npo, cfg.lambda)
                }
            }
            .map_err(|e| match e {
                Error::Numeric(message) => Error::Training { epoch, message },
                other => other,
            })
            .stage("unlearning")?;
            masked_step(current.params_mut(), &lv.grad, &mask, &mut state, cfg.lr, cfg.weight_decay).stage("unlearning")?;
            sum += lv.value;
            sum_f += lv.forget_term;
            sum_r += lv.retain_term;
            n += 1;
            steps += 1;
        }
        log_epochs.push(UnlearnEpoch {
            epoch,
            loss: sum / n as f64,
            forget_term: sum_f / n as f64,
            retain_term: sum_r / n as f64,
        });
    }
    if !current.params().all_finite() {
        return Err(Error::Training {
            epoch: cfg.epochs - 1,
            message: "parameters became non-finite".into(),
        }
        .in_stage("unlearning"));
    }
    let unlearn_seconds = unlearn_setup + t_loop.elapsed().as_secs_f64();

    let log = UnlearnLog {
        origin: mask.origin,
        loss_kind: cfg.loss_kind,
        p_fraction: mask.p_fraction,
        popcount: mask.popcount(),
        total_count: mask.len(),
        epsilon,
        noise_sigma: cfg.noise_sigma,
        mask_seconds,
        noise_seconds,
        unlearn_seconds,
        steps,
        epochs: log_epochs,
    };
    Ok(UnlearnOutcome {
        model: current,
        mask,
        log,
    })
}
