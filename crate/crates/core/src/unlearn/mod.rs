//! Gradient-ratio parameter selection, noise injection and masked unlearning.

mod gri;
mod loss;
mod mask;
mod noise;
mod run;
mod snapshot;

pub use gri::{gri_scores, percentile_abs, InfluenceScores};
pub use loss::{
    loss_grad_diff, loss_npo, loss_npo_with_reference, loss_po, npo_term, sequence_log_probs, LossValue,
};
pub use mask::{
    baseline_mask, build_mask, mask_budget, maskable, model_mask, read_mask, write_mask, MaskOrigin,
    SelectionMask, MASK_MAGIC,
};
pub use noise::{inject_noise, sigma_from_variance};
pub use run::{
    masked_step, run_unlearning, LossKind, Regime, UnlearnConfig, UnlearnData, UnlearnEpoch, UnlearnLog,
    UnlearnOutcome, NOISE_VARIANCE_GRID, P_GRID,
};
pub use snapshot::{compute_grad_snapshot, GradientSnapshot};
