//! Forgetting and utility metrics, and where a mask's selections fall.

mod density;
mod eval;
mod text;

pub use density::{mask_density_report, DensityRow, MaskDensityReport};
pub use eval::{
    evaluate_record, evaluate_split, keyword_confidence, predict, truth_ratio, MetricsReport, RecordMetrics,
    TruthRatio, LOG_PROB_FLOOR,
};
pub use text::{cosine_accuracy, count_cosine, keyword_accuracy, lcs_len, rouge_l_recall};
