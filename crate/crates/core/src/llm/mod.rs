//! Sampling K analyses per prompt, with per-sample perplexity.

mod cache;
mod mock;
mod openai;

pub(crate) mod openai_http {
    pub(crate) use super::openai::{post_json, with_retries};
}

pub use cache::{cache_key, AnalysisCache};
pub use mock::{risk_keywords, MockLlm, RiskPhrases};
pub use openai::{ApiMode, OpenAiLlm, OpenAiLlmConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::prompt::PromptBundle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSample {
    pub text: String,
    pub token_logprobs: Vec<f64>,
    pub perplexity: f64,
    pub backend_id: String,
    pub sample_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub k: usize,
    pub temperature: f64,
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { k: 8, temperature: 1.0, max_tokens: 1024, seed: 0 }
    }
}

/// One generated completion as returned by a backend.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    /// `None` when the backend did not report token probabilities.
    pub token_logprobs: Option<Vec<f64>>,
}

pub trait LlmBackend: Send + Sync {
    fn backend_id(&self) -> String;

    /// Returns `config.k` completions for the prompt, in sample order.
    fn complete(&self, prompt: &PromptBundle, config: &SamplingConfig) -> Result<Vec<Completion>>;

    /// Requests in flight across prompts.
    fn max_in_flight(&self) -> usize {
        1
    }
}

/// `exp(−mean(logprobs))` over generated tokens, natural base.
pub fn perplexity_from_logprobs(token_logprobs: &[f64]) -> Result<f64> {
    if token_logprobs.is_empty() {
        return Err(Error::domain("perplexity of an empty token list"));
    }
    let mut sum = 0.0;
    for &lp in token_logprobs {
        if !lp.is_finite() || lp > 0.0 {
            return Err(Error::data(format!("token logprob {lp} is not a finite value <= 0")));
        }
        sum += lp;
    }
    Ok((-sum / token_logprobs.len() as f64).exp())
}

pub fn sample_analyses(
    prompt: &PromptBundle,
    config: &SamplingConfig,
    backend: &dyn LlmBackend,
) -> Result<Vec<AnalysisSample>> {
    if config.k == 0 {
        return Err(Error::config("number of analyses K must be at least 1"));
    }
    let raw = backend.complete(prompt, config)?;
    if raw.len() != config.k {
        return Err(Error::Backend(format!(
            "backend returned {} completions, expected {}",
            raw.len(),
            config.k
        )));
    }
    let backend_id = backend.backend_id();
    raw.into_iter()
        .enumerate()
        .map(|(i, c)| {
            let logprobs = c.token_logprobs.ok_or_else(|| {
                Error::Capability(format!(
                    "backend {backend_id} returned no token logprobs; perplexity cannot be computed"
                ))
            })?;
            if c.text.is_empty() {
                return Err(Error::Backend(format!(
                    "empty completion {i} for patient {}",
                    prompt.patient_id
                )));
            }
            let perplexity = perplexity_from_logprobs(&logprobs)?;
            Ok(AnalysisSample {
                text: c.text,
                token_logprobs: logprobs,
                perplexity,
                backend_id: backend_id.clone(),
                sample_index: i,
            })
        })
        .collect()
}

/// Samples every prompt, serving hits from the cache and storing misses.
/// Output order follows `prompts`.
pub fn sample_all(
    prompts: &[PromptBundle],
    config: &SamplingConfig,
    backend: &dyn LlmBackend,
    mut cache: Option<&mut AnalysisCache>,
) -> Result<Vec<Vec<AnalysisSample>>> {
    let backend_id = backend.backend_id();
    let keys: Vec<String> = prompts.iter().map(|p| cache_key(&p.text, config, &backend_id)).collect();
    let mut out: Vec<Option<Vec<AnalysisSample>>> = keys
        .iter()
        .map(|k| cache.as_ref().and_then(|c| c.get(k).cloned()))
        .collect();
    let missing: Vec<usize> = (0..prompts.len()).filter(|&i| out[i].is_none()).collect();
    let fresh = par::bounded_map(&missing, backend.max_in_flight(), |&i| {
        sample_analyses(&prompts[i], config, backend)
    });
    for (&i, res) in missing.iter().zip(fresh) {
        let samples = res?;
        if let Some(c) = cache.as_mut() {
            c.insert(keys[i].clone(), &prompts[i].patient_id, samples.clone());
        }
        out[i] = Some(samples);
    }
    if let Some(c) = cache {
        c.flush()?;
    }
    Ok(out.into_iter().map(|s| s.expect("filled")).collect())
}
