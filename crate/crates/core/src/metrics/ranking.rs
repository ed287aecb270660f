use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::domain(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::domain("NaN score"));
    }
    Ok(())
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half (Mann-Whitney U / n₊n₋).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes".into()));
    }
    let order = descending(scores);
    // Walk tie groups from the top; each positive beats every negative below
    // its group and ties half of those inside it.
    let mut wins = 0.0;
    let mut neg_above = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos_g, mut neg_g) = (0usize, 0usize);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pos_g += 1;
            } else {
                neg_g += 1;
            }
            j += 1;
        }
        let neg_below = n_neg - neg_above - neg_g;
        wins += pos_g as f64 * (neg_below as f64 + 0.5 * neg_g as f64);
        neg_above += neg_g;
        i = j;
    }
    Ok(wins / (n_pos as f64 * n_neg as f64))
}

/// Average precision, `Σ (R_n − R_{n−1}) P_n` over descending thresholds with
/// tied scores forming a single threshold.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("AUPRC needs at least one positive".into()));
    }
    let order = descending(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

/// Macro average of one-vs-rest AUROC over classes that have both positive
/// and negative examples. `probs[i][c]` is the score of class `c` for row `i`.
pub fn auroc_one_vs_rest(probs: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::domain("length mismatch"));
    }
    let mut total = 0.0;
    let mut used = 0;
    for c in 0..n_classes {
        let bin: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let pos = bin.iter().filter(|&&b| b).count();
        if pos == 0 || pos == bin.len() {
            continue;
        }
        let s: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        total += auroc(&s, &bin)?;
        used += 1;
    }
    if used == 0 {
        return Err(Error::UndefinedMetric("no class has both positives and negatives".into()));
    }
    Ok(total / used as f64)
}
