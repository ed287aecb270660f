//! Dense vectors for analysis texts.

mod cache;
mod mock;
mod openai;

pub use cache::EmbeddingCache;
pub use mock::{tokenize, MockEmbedder};
pub use openai::{OpenAiEmbedder, OpenAiEmbedderConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisEmbedding {
    pub vector: Vec<f64>,
    pub patient_id: String,
    pub sample_index: usize,
    pub model_id: String,
}

pub trait EmbedBackend: Send + Sync {
    fn model_id(&self) -> String;

    /// One vector per text, in input order.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;

    fn batch_size(&self) -> usize {
        64
    }

    fn max_in_flight(&self) -> usize {
        1
    }
}

fn check_dims(vectors: &[Vec<f64>], expected: Option<usize>) -> Result<usize> {
    let d = expected.or_else(|| vectors.first().map(Vec::len)).unwrap_or(0);
    for v in vectors {
        if v.len() != d {
            return Err(Error::Backend(format!("embedding dimension {} differs from {d}", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Backend("non-finite embedding entry".into()));
        }
    }
    Ok(d)
}

/// Embeds `texts` in batches, with every vector sharing one dimension.
pub fn embed_texts(texts: &[String], backend: &dyn EmbedBackend) -> Result<Vec<Vec<f64>>> {
    if let Some(i) = texts.iter().position(|t| t.is_empty()) {
        return Err(Error::domain(format!("text {i} is empty")));
    }
    let chunks: Vec<&[String]> = texts.chunks(backend.batch_size().max(1)).collect();
    let results = par::bounded_map(&chunks, backend.max_in_flight(), |c| {
        let out = backend.embed_batch(c)?;
        if out.len() != c.len() {
            return Err(Error::Backend(format!("{} vectors for {} texts", out.len(), c.len())));
        }
        Ok(out)
    });
    let mut all = Vec::with_capacity(texts.len());
    for r in results {
        all.extend(r?);
    }
    check_dims(&all, None)?;
    Ok(all)
}

/// Embeds `(patient_id, sample_index, text)` triples through the cache. The
/// dimension of the first vector seen (cached or fresh) is locked for the run.
pub fn embed_samples(
    items: &[(String, usize, String)],
    backend: &dyn EmbedBackend,
    mut cache: Option<&mut EmbeddingCache>,
) -> Result<Vec<AnalysisEmbedding>> {
    let model_id = backend.model_id();
    let mut out: Vec<Option<Vec<f64>>> = items
        .iter()
        .map(|(_, _, t)| cache.as_ref().and_then(|c| c.get(&model_id, t).cloned()))
        .collect();
    let missing: Vec<usize> = (0..items.len()).filter(|&i| out[i].is_none()).collect();
    let texts: Vec<String> = missing.iter().map(|&i| items[i].2.clone()).collect();
    if !texts.is_empty() {
        let fresh = embed_texts(&texts, backend)?;
        for (&i, v) in missing.iter().zip(fresh) {
            if let Some(c) = cache.as_mut() {
                c.insert(&model_id, &items[i].0, items[i].1, &items[i].2, v.clone());
            }
            out[i] = Some(v);
        }
    }
    if let Some(c) = cache {
        c.flush()?;
    }
    let vectors: Vec<Vec<f64>> = out.into_iter().map(|v| v.expect("filled")).collect();
    check_dims(&vectors, None)?;
    Ok(items
        .iter()
        .zip(vectors)
        .map(|((pid, idx, _), vector)| AnalysisEmbedding {
            vector,
            patient_id: pid.clone(),
            sample_index: *idx,
            model_id: model_id.clone(),
        })
        .collect())
}
