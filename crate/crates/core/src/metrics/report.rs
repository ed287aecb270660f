use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{accuracy, auprc, auroc, auroc_one_vs_rest, cohen_kappa, macro_f1};
use crate::ehr::TaskKind;
use crate::error::Result;

/// Metric values as fractions in [0, 1], keyed by metric name.
pub type MetricSet = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskKind,
    /// Free-form label of what was evaluated, e.g. `fused` or `k=4`.
    pub variant: String,
    pub metrics: MetricSet,
    pub n_test: usize,
    pub seed: u64,
    pub config_hash: String,
    #[serde(default)]
    pub best_epoch: Option<usize>,
    #[serde(default)]
    pub val_auroc_trace: Vec<f64>,
}

impl EvalReport {
    /// Computes the task's metric set from per-row class probabilities (one
    /// column for binary tasks).
    pub fn metrics_for(task: TaskKind, probs: &[Vec<f64>], labels: &[usize]) -> Result<MetricSet> {
        let mut m = MetricSet::new();
        if task.is_binary() {
            let scores: Vec<f64> = probs.iter().map(|p| p[0]).collect();
            let bin: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
            m.insert("auroc".into(), auroc(&scores, &bin)?);
            m.insert("auprc".into(), auprc(&scores, &bin)?);
        } else {
            let n = task.n_classes();
            let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
            m.insert("auroc".into(), auroc_one_vs_rest(probs, labels, n)?);
            m.insert("kappa".into(), cohen_kappa(&pred, labels, n)?);
            m.insert("accuracy".into(), accuracy(&pred, labels)?);
            m.insert("f1".into(), macro_f1(&pred, labels, n)?);
        }
        Ok(m)
    }

    pub fn auroc(&self) -> f64 {
        self.metrics.get("auroc").copied().unwrap_or(f64::NAN)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

fn columns(task: TaskKind) -> &'static [(&'static str, &'static str)] {
    if task.is_binary() {
        &[("auroc", "AUROC(%)"), ("auprc", "AUPRC(%)")]
    } else {
        &[
            ("auroc", "AUROC(%)"),
            ("kappa", "Kappa(%)"),
            ("accuracy", "Accuracy(%)"),
            ("f1", "F1 Score(%)"),
        ]
    }
}

/// Human-readable table, one block per task, percentages to two decimals.
/// Rows with the same task and variant across seeds are shown as mean ± sd.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let mut tasks: Vec<TaskKind> = Vec::new();
    for r in reports {
        if !tasks.contains(&r.task) {
            tasks.push(r.task);
        }
    }
    for task in tasks {
        let cols = columns(task);
        let _ = write!(out, "{:<24}", format!("{} task", task.as_str()));
        for (_, title) in cols {
            let _ = write!(out, " {:>18}", title);
        }
        out.push('\n');
        let mut variants: Vec<&str> = Vec::new();
        for r in reports.iter().filter(|r| r.task == task) {
            if !variants.contains(&r.variant.as_str()) {
                variants.push(&r.variant);
            }
        }
        for v in variants {
            let rows: Vec<&EvalReport> = reports.iter().filter(|r| r.task == task && r.variant == v).collect();
            let _ = write!(out, "{:<24}", v);
            for (key, _) in cols {
                let vals: Vec<f64> = rows.iter().filter_map(|r| r.metrics.get(*key)).map(|x| 100.0 * x).collect();
                let cell = if vals.is_empty() {
                    "-".to_string()
                } else if vals.len() == 1 {
                    format!("{:.2}", vals[0])
                } else {
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
                    format!("{:.2}±{:.2}", mean, var.sqrt())
                };
                let _ = write!(out, " {:>18}", cell);
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}
