use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::model::{Model, Sequence};

/// Gradient of the mean answer-span cross-entropy at a fixed parameter point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientSnapshot {
    pub values: Vec<f64>,
    pub source_split: Split,
    pub loss_kind: String,
    pub n_examples: usize,
}

/// Per-token mean cross-entropy gradient over all of `records`.
pub fn compute_grad_snapshot(model: &Model, records: &[Sequence], split: Split) -> Result<GradientSnapshot> {
    if records.is_empty() {
        return Err(Error::contract(format!("gradient snapshot of an empty {split} set")));
    }
    let (_, values) = model.batch_loss_grad(records)?;
    if let Some(i) = values.iter().position(|g| !g.is_finite()) {
        let (entry, local) = model.params().locate(i).expect("index within parameters");
        return Err(Error::numeric(format!(
            "non-finite {split} gradient at {}[{local}]",
            model.params().entries()[entry].name
        )));
    }
    Ok(GradientSnapshot {
        values,
        source_split: split,
        loss_kind: "answer_ce".to_string(),
        n_examples: records.len(),
    })
}
