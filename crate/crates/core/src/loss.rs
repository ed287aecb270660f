//! Task losses on logits.

use crate::ehr::TaskKind;
use crate::error::{Error, Result};
use crate::math::{log_sum_exp, sigmoid, softmax, softplus};

fn check(logits: &[f64], label: usize, task: TaskKind) -> Result<()> {
    if logits.len() != task.output_dim() {
        return Err(Error::domain(format!(
            "{} logits for task {} (expected {})",
            logits.len(),
            task,
            task.output_dim()
        )));
    }
    if label >= task.n_classes() {
        return Err(Error::domain(format!("label {label} out of range for task {task}")));
    }
    Ok(())
}

/// Sigmoid cross-entropy for binary tasks, softmax cross-entropy otherwise.
pub fn compute_loss(logits: &[f64], label: usize, task: TaskKind) -> Result<f64> {
    check(logits, label, task)?;
    Ok(if task.is_binary() {
        let z = logits[0];
        if label == 1 {
            softplus(-z)
        } else {
            softplus(z)
        }
    } else {
        log_sum_exp(logits) - logits[label]
    })
}

/// Loss and its gradient with respect to the logits.
pub fn loss_and_grad(logits: &[f64], label: usize, task: TaskKind) -> Result<(f64, Vec<f64>)> {
    let loss = compute_loss(logits, label, task)?;
    let grad = if task.is_binary() {
        vec![sigmoid(logits[0]) - label as f64]
    } else {
        let mut p = softmax(logits);
        p[label] -= 1.0;
        p
    };
    Ok((loss, grad))
}

/// Class scores: `[P(y=1)]` for binary tasks, the softmax otherwise.
pub fn probabilities(logits: &[f64], task: TaskKind) -> Vec<f64> {
    if task.is_binary() {
        vec![sigmoid(logits[0])]
    } else {
        softmax(logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_values() {
        assert!((compute_loss(&[0.0], 1, TaskKind::Mortality).unwrap() - 2f64.ln()).abs() < 1e-15);
        let u = vec![0.3; 10];
        for l in 0..10 {
            assert!((compute_loss(&u, l, TaskKind::Los).unwrap() - 10f64.ln()).abs() < 1e-14);
        }
        assert!(compute_loss(&[0.0], 2, TaskKind::Mortality).is_err());
        assert!(compute_loss(&u, 10, TaskKind::Los).is_err());
        assert!(compute_loss(&[0.0, 1.0], 0, TaskKind::Readmission).is_err());
    }

    #[test]
    fn gradient_matches_differences() {
        let logits = [0.3, -1.2, 2.0, 0.0, 0.5, -0.5, 1.0, 0.1, -2.0, 0.7];
        let (_, g) = loss_and_grad(&logits, 4, TaskKind::Los).unwrap();
        for i in 0..10 {
            let mut a = logits;
            let mut b = logits;
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (compute_loss(&a, 4, TaskKind::Los).unwrap() - compute_loss(&b, 4, TaskKind::Los).unwrap()) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }
}
