//! Uniform manifold approximation and projection over Dice distances.
//!
//! Fit: exact k-nearest-neighbour graph, per-point smooth-kNN fuzzy
//! memberships, fuzzy union `a + b − ab`, spectral initialisation from the
//! normalised graph Laplacian, then negative-sampling SGD on the fuzzy
//! cross-entropy. Training points are ordered by patient id before anything
//! else, so the result does not depend on input order; distance ties are
//! broken by that order too.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dice::{dice_sorted, CodeSet};
use crate::ehr::PatientRecord;
use crate::error::{Error, Result};
use crate::par::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducerParams {
    pub k_neighbors: usize,
    pub d_r: usize,
    pub n_epochs: usize,
    pub seed: u64,
    #[serde(default = "default_min_dist")]
    pub min_dist: f64,
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default = "default_negative_rate")]
    pub negative_sample_rate: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
}

fn default_min_dist() -> f64 {
    0.1
}
fn default_spread() -> f64 {
    1.0
}
fn default_negative_rate() -> usize {
    5
}
fn default_learning_rate() -> f64 {
    1.0
}

impl Default for ReducerParams {
    fn default() -> Self {
        ReducerParams {
            k_neighbors: 15,
            d_r: 10,
            n_epochs: 200,
            seed: 0,
            min_dist: default_min_dist(),
            spread: default_spread(),
            negative_sample_rate: default_negative_rate(),
            learning_rate: default_learning_rate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedEmbedding {
    pub patient_id: String,
    pub coords: Vec<f64>,
}

/// A weighted edge of the symmetrised fuzzy graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuzzyEdge {
    pub head: usize,
    pub tail: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedReducer {
    pub params: ReducerParams,
    /// Curve parameters of the low-dimensional similarity `1 / (1 + a d^{2b})`.
    pub curve: (f64, f64),
    /// Sorted training vocabulary; position is the code id.
    pub codes: Vec<String>,
    /// Training patient ids in ascending order.
    pub train_ids: Vec<String>,
    pub train_sets: Vec<CodeSet>,
    /// Row `i` is the embedding of `train_ids[i]`.
    pub embedding: Vec<Vec<f64>>,
}

/// Neighbour list of one point: `(distance, index)` in ascending order.
pub type Neighbors = Vec<(f64, usize)>;

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// The `k` nearest training sets to `query`, skipping index `skip`.
pub fn nearest(sets: &[CodeSet], query: &CodeSet, k: usize, skip: Option<usize>) -> Neighbors {
    let mut all: Vec<(f64, usize)> = sets
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != skip)
        .map(|(j, s)| (dice_sorted(query, s), j))
        .collect();
    let k = k.min(all.len());
    if k == 0 {
        return Vec::new();
    }
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, by_distance_then_index);
        all.truncate(k);
    }
    all.sort_by(by_distance_then_index);
    all
}

/// Exact kNN graph (self excluded) for every training set.
pub fn knn_graph(sets: &[CodeSet], k: usize, exec: Execution) -> Vec<Neighbors> {
    exec.map_range(sets.len(), |i| nearest(sets, &sets[i], k, Some(i)))
}

/// Local connectivity `rho` and bandwidth `sigma` such that
/// `Σ exp(−max(0, d − rho)/sigma) = log2(k)` over the neighbour distances.
pub fn smooth_knn_dist(dists: &[f64], mean_all: f64) -> (f64, f64) {
    const TOL: f64 = 1e-5;
    const MIN_SCALE: f64 = 1e-3;
    let k = dists.len().max(1);
    let target = (k as f64).log2();
    let rho = dists.iter().copied().find(|&d| d > 0.0).unwrap_or(0.0);
    let (mut lo, mut hi, mut mid) = (0.0_f64, f64::INFINITY, 1.0_f64);
    for _ in 0..64 {
        let psum: f64 = dists
            .iter()
            .map(|&d| {
                let x = d - rho;
                if x > 0.0 {
                    (-x / mid).exp()
                } else {
                    1.0
                }
            })
            .sum();
        if (psum - target).abs() < TOL {
            break;
        }
        if psum > target {
            hi = mid;
            mid = 0.5 * (lo + hi);
        } else {
            lo = mid;
            mid = if hi.is_infinite() { mid * 2.0 } else { 0.5 * (lo + hi) };
        }
    }
    let mean_i = dists.iter().sum::<f64>() / k as f64;
    let floor = if rho > 0.0 { mean_i } else { mean_all } * MIN_SCALE;
    (rho, mid.max(floor))
}

pub fn membership(d: f64, rho: f64, sigma: f64) -> f64 {
    let x = d - rho;
    if x <= 0.0 || sigma <= 0.0 {
        1.0
    } else {
        (-x / sigma).exp()
    }
}

/// Directed memberships symmetrised with the probabilistic t-conorm. Returns
/// both directions of every edge, sorted by `(head, tail)`.
pub fn fuzzy_union(knn: &[Neighbors]) -> Vec<FuzzyEdge> {
    let total: f64 = knn.iter().flatten().map(|n| n.0).sum();
    let count = knn.iter().map(Vec::len).sum::<usize>().max(1);
    let mean_all = total / count as f64;
    let mut directed: HashMap<(usize, usize), f64> = HashMap::new();
    for (i, row) in knn.iter().enumerate() {
        let dists: Vec<f64> = row.iter().map(|n| n.0).collect();
        let (rho, sigma) = smooth_knn_dist(&dists, mean_all);
        for &(d, j) in row {
            directed.insert((i, j), membership(d, rho, sigma));
        }
    }
    let mut sym: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (&(i, j), &a) in &directed {
        let b = directed.get(&(j, i)).copied().unwrap_or(0.0);
        let w = a + b - a * b;
        sym.insert((i, j), w);
        sym.insert((j, i), w);
    }
    sym.into_iter()
        .filter(|&(_, w)| w > 0.0)
        .map(|((head, tail), weight)| FuzzyEdge { head, tail, weight })
        .collect()
}

/// Least-squares fit of `1/(1 + a x^{2b})` to the target similarity curve
/// implied by `min_dist` and `spread` (Gauss-Newton with step halving).
pub fn fit_curve(min_dist: f64, spread: f64) -> (f64, f64) {
    let xs: Vec<f64> = (0..300).map(|i| 3.0 * spread * i as f64 / 299.0).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| if x < min_dist { 1.0 } else { (-(x - min_dist) / spread).exp() })
        .collect();
    let sse = |a: f64, b: f64| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| {
                let f = 1.0 / (1.0 + a * x.powf(2.0 * b));
                (f - y).powi(2)
            })
            .sum()
    };
    let (mut a, mut b) = (1.0_f64, 1.0_f64);
    let mut err = sse(a, b);
    for _ in 0..200 {
        let (mut jtj, mut jtr) = ([[0.0; 2]; 2], [0.0; 2]);
        for (&x, &y) in xs.iter().zip(&ys) {
            if x == 0.0 {
                continue;
            }
            let p = x.powf(2.0 * b);
            let den = 1.0 + a * p;
            let f = 1.0 / den;
            let da = -p / (den * den);
            let db = -a * p * 2.0 * x.ln() / (den * den);
            let r = f - y;
            let j = [da, db];
            for u in 0..2 {
                jtr[u] += j[u] * r;
                for v in 0..2 {
                    jtj[u][v] += j[u] * j[v];
                }
            }
        }
        let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
        if det.abs() < 1e-300 {
            break;
        }
        let step = [
            (jtj[1][1] * jtr[0] - jtj[0][1] * jtr[1]) / det,
            (jtj[0][0] * jtr[1] - jtj[1][0] * jtr[0]) / det,
        ];
        let mut scale = 1.0;
        let mut improved = false;
        while scale > 1e-6 {
            let (na, nb) = (a - scale * step[0], b - scale * step[1]);
            if na > 0.0 && nb > 0.0 {
                let e = sse(na, nb);
                if e < err {
                    a = na;
                    b = nb;
                    improved = (err - e) > 1e-14;
                    err = e;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (a, b)
}

/// Spectral layout: eigenvectors of `D^{-1/2} A D^{-1/2}` for the largest
/// non-trivial eigenvalues, found by subspace iteration with a Rayleigh-Ritz
/// rotation. Returns `None` when the graph is too small for `dim` vectors.
pub fn spectral_layout(n: usize, edges: &[FuzzyEdge], dim: usize, seed: u64) -> Option<Vec<Vec<f64>>> {
    let m = dim + 1;
    if n <= m + 1 {
        return None;
    }
    let mut degree = vec![0.0; n];
    for e in edges {
        degree[e.head] += e.weight;
    }
    if degree.iter().any(|&d| d <= 0.0) {
        return None;
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    // (I + S)/2 has spectrum in [0, 1] with the wanted vectors on top.
    let apply = |x: &[f64], out: &mut [f64]| {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = 0.5 * xi;
        }
        for e in edges {
            out[e.head] += 0.5 * e.weight * inv_sqrt[e.head] * inv_sqrt[e.tail] * x[e.tail];
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    let mut basis: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..n).map(|_| rng.random::<f64>() - 0.5).collect())
        .collect();
    orthonormalize(&mut basis)?;
    let mut next = vec![vec![0.0; n]; m];
    for _ in 0..300 {
        for (b, out) in basis.iter().zip(next.iter_mut()) {
            apply(b, out);
        }
        std::mem::swap(&mut basis, &mut next);
        orthonormalize(&mut basis)?;
    }
    let mut projected = DMatrix::<f64>::zeros(m, m);
    let mut tmp = vec![0.0; n];
    for j in 0..m {
        apply(&basis[j], &mut tmp);
        for i in 0..m {
            projected[(i, j)] = crate::math::dot(&basis[i], &tmp);
        }
    }
    let projected = (&projected + projected.transpose()) * 0.5;
    let eig = SymmetricEigen::new(projected);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let coords: Vec<Vec<f64>> = (0..n)
        .map(|p| {
            order[1..]
                .iter()
                .map(|&c| (0..m).map(|i| eig.eigenvectors[(i, c)] * basis[i][p]).sum())
                .collect()
        })
        .collect();
    Some(coords)
}

fn orthonormalize(vs: &mut [Vec<f64>]) -> Option<()> {
    for i in 0..vs.len() {
        for j in 0..i {
            let (head, tail) = vs.split_at_mut(i);
            let proj = crate::math::dot(&tail[0], &head[j]);
            crate::math::axpy(-proj, &head[j], &mut tail[0]);
        }
        let nrm = crate::math::norm(&vs[i]);
        if !(nrm > 1e-12) {
            return None;
        }
        vs[i].iter_mut().for_each(|x| *x /= nrm);
    }
    Some(())
}

fn clip(x: f64) -> f64 {
    x.clamp(-4.0, 4.0)
}

/// Negative-sampling SGD on the fuzzy cross-entropy, moving both endpoints
/// of each sampled edge.
fn optimize_layout(
    embedding: &mut [Vec<f64>],
    edges: &[FuzzyEdge],
    params: &ReducerParams,
    (a, b): (f64, f64),
    rng: &mut ChaCha8Rng,
) {
    let n = embedding.len();
    let dim = params.d_r;
    let max_w = edges.iter().map(|e| e.weight).fold(0.0_f64, f64::max);
    let epochs_per_sample: Vec<f64> = edges.iter().map(|e| max_w / e.weight).collect();
    let neg_rate = params.negative_sample_rate.max(1) as f64;
    let epochs_per_negative: Vec<f64> = epochs_per_sample.iter().map(|e| e / neg_rate).collect();
    let mut next_sample = epochs_per_sample.clone();
    let mut next_negative = epochs_per_negative.clone();
    let mut diff = vec![0.0; dim];
    for epoch in 0..params.n_epochs {
        let alpha = params.learning_rate * (1.0 - epoch as f64 / params.n_epochs as f64);
        let now = epoch as f64;
        for (e, edge) in edges.iter().enumerate() {
            if next_sample[e] > now {
                continue;
            }
            let (j, k) = (edge.head, edge.tail);
            let mut d2 = 0.0;
            for t in 0..dim {
                diff[t] = embedding[j][t] - embedding[k][t];
                d2 += diff[t] * diff[t];
            }
            let coeff = if d2 > 0.0 {
                -2.0 * a * b * d2.powf(b - 1.0) / (a * d2.powf(b) + 1.0)
            } else {
                0.0
            };
            for t in 0..dim {
                let g = clip(coeff * diff[t]) * alpha;
                embedding[j][t] += g;
                embedding[k][t] -= g;
            }
            next_sample[e] += epochs_per_sample[e];

            let n_neg = ((now - next_negative[e]) / epochs_per_negative[e]).floor().max(0.0) as usize;
            for _ in 0..n_neg {
                let k = rng.random_range(0..n);
                if k == j {
                    continue;
                }
                let mut d2 = 0.0;
                for t in 0..dim {
                    diff[t] = embedding[j][t] - embedding[k][t];
                    d2 += diff[t] * diff[t];
                }
                let coeff = if d2 > 0.0 {
                    2.0 * b / ((0.001 + d2) * (a * d2.powf(b) + 1.0))
                } else {
                    0.0
                };
                for t in 0..dim {
                    let g = if coeff > 0.0 { clip(coeff * diff[t]) } else { 4.0 };
                    embedding[j][t] += g * alpha;
                }
            }
            next_negative[e] += n_neg as f64 * epochs_per_negative[e];
        }
    }
}

impl FittedReducer {
    pub fn fit(records: &[&PatientRecord], params: ReducerParams, exec: Execution) -> Result<Self> {
        let n = records.len();
        if params.k_neighbors == 0 || params.k_neighbors >= n {
            return Err(Error::config(format!(
                "k_neighbors = {} needs more than {} training patients",
                params.k_neighbors, params.k_neighbors
            )));
        }
        if params.d_r == 0 {
            return Err(Error::config("reduced dimension must be at least 1"));
        }
        let mut sorted: Vec<&PatientRecord> = records.to_vec();
        sorted.sort_by(|x, y| x.patient_id.cmp(&y.patient_id));
        let mut codes: Vec<String> = sorted
            .iter()
            .flat_map(|r| r.all_codes().map(str::to_owned))
            .collect();
        codes.sort();
        codes.dedup();
        let index: HashMap<&str, u32> = codes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i as u32))
            .collect();
        let train_sets: Vec<CodeSet> = sorted.iter().map(|r| code_set(r, &index)).collect();
        let train_ids: Vec<String> = sorted.iter().map(|r| r.patient_id.clone()).collect();

        let knn = knn_graph(&train_sets, params.k_neighbors, exec);
        let mut edges = fuzzy_union(&knn);
        let max_w = edges.iter().map(|e| e.weight).fold(0.0_f64, f64::max);
        if params.n_epochs > 0 {
            let cut = max_w / params.n_epochs as f64;
            edges.retain(|e| e.weight >= cut);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut embedding = match spectral_layout(n, &edges, params.d_r, params.seed) {
            Some(e) => e,
            None => (0..n)
                .map(|_| (0..params.d_r).map(|_| rng.random_range(-10.0..10.0)).collect())
                .collect(),
        };
        rescale(&mut embedding, &mut rng);
        let curve = fit_curve(params.min_dist, params.spread);
        optimize_layout(&mut embedding, &edges, &params, curve, &mut rng);
        if embedding.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("reducer produced non-finite coordinates".into()));
        }
        Ok(FittedReducer {
            params,
            curve,
            codes,
            train_ids,
            train_sets,
            embedding,
        })
    }

    pub fn code_set(&self, record: &PatientRecord) -> CodeSet {
        let mut ids = Vec::new();
        let mut unshared = 0;
        let mut seen = std::collections::HashSet::new();
        for c in record.all_codes() {
            if !seen.insert(c) {
                continue;
            }
            match self.codes.binary_search_by(|x| x.as_str().cmp(c)) {
                Ok(i) => ids.push(i as u32),
                Err(_) => unshared += 1,
            }
        }
        ids.sort_unstable();
        CodeSet { ids, unshared }
    }

    /// Training embeddings paired with their ids.
    pub fn training_embeddings(&self) -> Vec<ReducedEmbedding> {
        self.train_ids
            .iter()
            .zip(&self.embedding)
            .map(|(id, c)| ReducedEmbedding {
                patient_id: id.clone(),
                coords: c.clone(),
            })
            .collect()
    }

    /// Neighbours of `record` among the training points, with their kernel
    /// weights.
    pub fn weighted_neighbors(&self, record: &PatientRecord) -> Vec<(usize, f64)> {
        let query = self.code_set(record);
        let nn = nearest(&self.train_sets, &query, self.params.k_neighbors, None);
        let dists: Vec<f64> = nn.iter().map(|x| x.0).collect();
        let mean = dists.iter().sum::<f64>() / dists.len().max(1) as f64;
        let (rho, sigma) = smooth_knn_dist(&dists, mean);
        nn.iter().map(|&(d, j)| (j, membership(d, rho, sigma))).collect()
    }

    /// Out-of-sample placement at the kernel-weighted mean of the `k` nearest
    /// training embeddings.
    pub fn transform(&self, record: &PatientRecord) -> Result<ReducedEmbedding> {
        if self.embedding.is_empty() {
            return Err(Error::State("reducer has not been fitted".into()));
        }
        let nb = self.weighted_neighbors(record);
        let total: f64 = nb.iter().map(|x| x.1).sum();
        let mut coords = vec![0.0; self.params.d_r];
        for &(j, w) in &nb {
            crate::math::axpy(w / total, &self.embedding[j], &mut coords);
        }
        Ok(ReducedEmbedding {
            patient_id: record.patient_id.clone(),
            coords,
        })
    }

    /// Training coordinates for training patients, `transform` otherwise.
    pub fn place(&self, record: &PatientRecord) -> Result<ReducedEmbedding> {
        match self.train_ids.binary_search(&record.patient_id) {
            Ok(i) => Ok(ReducedEmbedding {
                patient_id: record.patient_id.clone(),
                coords: self.embedding[i].clone(),
            }),
            Err(_) => self.transform(record),
        }
    }

    pub fn transform_all(&self, records: &[PatientRecord], exec: Execution) -> Result<Vec<ReducedEmbedding>> {
        exec.try_map(records, |r| self.transform(r))
    }
}

fn code_set(record: &PatientRecord, index: &HashMap<&str, u32>) -> CodeSet {
    let mut ids: Vec<u32> = record.all_codes().filter_map(|c| index.get(c).copied()).collect();
    ids.sort_unstable();
    ids.dedup();
    CodeSet { ids, unshared: 0 }
}

/// Per-dimension rescale into [0, 10] plus a little jitter.
fn rescale(embedding: &mut [Vec<f64>], rng: &mut ChaCha8Rng) {
    let Some(dim) = embedding.first().map(Vec::len) else { return };
    let noise = Normal::new(0.0, 1e-4).expect("valid normal");
    for t in 0..dim {
        let (lo, hi) = embedding
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), r| (l.min(r[t]), h.max(r[t])));
        let span = if hi > lo { hi - lo } else { 1.0 };
        for row in embedding.iter_mut() {
            row[t] = 10.0 * (row[t] - lo) / span + noise.sample(rng);
        }
    }
}
