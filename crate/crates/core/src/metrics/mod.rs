//! Evaluation: ranking metrics, per-region overlap and the report.

mod components;
mod pro;
mod ranking;
mod report;

pub use components::label_components;
pub use pro::{integrate, pro, pro_curve};
pub use ranking::{auprc, auroc, best_f1_threshold, max_dice, thresholded_stats, ThresholdStats};
pub use report::{evaluate, volume_metrics, EvalReport, ScopeMetrics, Skipped};
