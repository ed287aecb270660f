use std::collections::BTreeSet;

/// Dice-Sorensen distance `1 − 2|a∩b| / (|a|+|b|)`; two empty sets are at
/// distance 0.
pub fn dice_distance<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let total = a.len() + b.len();
    if total == 0 {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    1.0 - 2.0 * inter as f64 / total as f64
}

/// A code set as sorted, unique known ids plus a count of codes that no
/// other set can share (out-of-vocabulary at transform time).
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CodeSet {
    pub ids: Vec<u32>,
    pub unshared: usize,
}

impl CodeSet {
    pub fn len(&self) -> usize {
        self.ids.len() + self.unshared
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Same value as [`dice_distance`], by a linear merge over sorted ids.
pub fn dice_sorted(a: &CodeSet, b: &CodeSet) -> f64 {
    let total = a.len() + b.len();
    if total == 0 {
        return 0.0;
    }
    let (x, y) = (&a.ids, &b.ids);
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < x.len() && j < y.len() {
        match x[i].cmp(&y[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    1.0 - 2.0 * inter as f64 / total as f64
}
