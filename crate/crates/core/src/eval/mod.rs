//! Splits, metrics, cross-validated grid search, the feature-combination
//! study and subgroup analysis.

pub mod cv;
pub mod metrics;
pub mod split;
pub mod study;
pub mod subgroup;

pub use metrics::{auc, compute_metrics, Confusion, MetricReport};
pub use split::{split_622, Split, SplitAssignment};
