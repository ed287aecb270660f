use crate::error::{Error, Result};

fn check(pred: &[usize], labels: &[usize]) -> Result<()> {
    if pred.len() != labels.len() {
        return Err(Error::domain(format!(
            "{} predictions but {} labels",
            pred.len(),
            labels.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::domain("no predictions"));
    }
    Ok(())
}

fn check_classes(pred: &[usize], labels: &[usize], n_classes: usize) -> Result<()> {
    check(pred, labels)?;
    if n_classes < 2 {
        return Err(Error::domain("need at least two classes"));
    }
    if pred.iter().chain(labels).any(|&c| c >= n_classes) {
        return Err(Error::domain(format!("class index outside 0..{n_classes}")));
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> Result<f64> {
    check(pred, labels)?;
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Cohen's kappa; chance agreement of exactly one yields 0.
pub fn cohen_kappa(pred: &[usize], labels: &[usize], n_classes: usize) -> Result<f64> {
    check_classes(pred, labels, n_classes)?;
    let n = pred.len() as f64;
    let mut pm = vec![0.0; n_classes];
    let mut lm = vec![0.0; n_classes];
    let mut agree = 0.0;
    for (&p, &l) in pred.iter().zip(labels) {
        pm[p] += 1.0;
        lm[l] += 1.0;
        if p == l {
            agree += 1.0;
        }
    }
    let p_o = agree / n;
    let p_e: f64 = pm.iter().zip(&lm).map(|(a, b)| a * b).sum::<f64>() / (n * n);
    if p_e == 1.0 {
        return Ok(0.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Unweighted mean of per-class F1 over all `n_classes`; a class with no
/// true positives contributes 0.
pub fn macro_f1(pred: &[usize], labels: &[usize], n_classes: usize) -> Result<f64> {
    check_classes(pred, labels, n_classes)?;
    let mut tp = vec![0.0; n_classes];
    let mut fp = vec![0.0; n_classes];
    let mut fneg = vec![0.0; n_classes];
    for (&p, &l) in pred.iter().zip(labels) {
        if p == l {
            tp[p] += 1.0;
        } else {
            fp[p] += 1.0;
            fneg[l] += 1.0;
        }
    }
    let total: f64 = (0..n_classes)
        .map(|c| {
            let denom = 2.0 * tp[c] + fp[c] + fneg[c];
            if tp[c] == 0.0 || denom == 0.0 {
                0.0
            } else {
                2.0 * tp[c] / denom
            }
        })
        .sum();
    Ok(total / n_classes as f64)
}
