//! Evaluation metrics and report files.

mod classification;
mod ranking;
mod report;

pub use classification::{accuracy, cohen_kappa, macro_f1};
pub use ranking::{auprc, auroc, auroc_one_vs_rest};
pub use report::{format_table, EvalReport, MetricSet};
