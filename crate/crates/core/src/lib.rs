//! Desk-scale machine unlearning: a small transformer trained on synthetic
//! question/answer records, gradient-ratio parameter scoring, noise injection
//! and masked fine-tuning, plus the evaluation metrics used to judge the result.

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod unlearn;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig, Sequence};
pub use params::{ModuleKind, ParamSet};
pub use tensor::{Graph, Tensor, Var};
