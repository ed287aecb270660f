use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::EmbedBackend;
use crate::error::Result;
use crate::math::{fnv1a, mix_seed};

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Bag of tokens projected through a fixed seeded Gaussian matrix, scaled
/// to unit length.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl MockEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }

    fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[fnv1a(token.as_bytes()), self.seed]));
        (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut counts: BTreeMap<String, f64> = BTreeMap::new();
        for t in tokenize(text) {
            *counts.entry(t).or_default() += 1.0;
        }
        let mut v = vec![0.0; self.dim];
        for (tok, c) in &counts {
            for (a, b) in v.iter_mut().zip(self.token_vector(tok)) {
                *a += c * b;
            }
        }
        let n = crate::math::norm(&v);
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
        v
    }
}

impl EmbedBackend for MockEmbedder {
    fn model_id(&self) -> String {
        format!("mock-embed(d={},seed={})", self.dim, self.seed)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn max_in_flight(&self) -> usize {
        8
    }
}
