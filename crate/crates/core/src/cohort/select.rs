/// Cohorts whose membership exceeds `theta`, most probable first. Pruned
/// components (`effective_mask` false) never qualify.
pub fn select_cohorts(responsibilities: &[f64], effective_mask: &[bool], theta: f64) -> Vec<(usize, f64)> {
    let mut picked: Vec<(usize, f64)> = responsibilities
        .iter()
        .enumerate()
        .filter(|&(k, &p)| p > theta && effective_mask.get(k).copied().unwrap_or(true))
        .map(|(k, &p)| (k, p))
        .collect();
    picked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    picked
}
