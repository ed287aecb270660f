use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::EmbedBackend;
use crate::error::{Error, Result};
use crate::llm::openai_http::{post_json, with_retries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpenAiEmbedderConfig {
    pub base_url: String,
    pub model: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub batch_size: usize,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
}

impl Default for OpenAiEmbedderConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8001".into(),
            model: "default".into(),
            api_key: None,
            batch_size: 32,
            max_retries: 3,
            backoff_ms: 500,
            timeout_secs: 300,
            max_in_flight: 8,
        }
    }
}

impl OpenAiEmbedderConfig {
    /// Applies `EMBED_BASE_URL`, `EMBED_MODEL` and `EMBED_API_KEY` when set.
    pub fn with_env(mut self) -> Self {
        if let Ok(v) = std::env::var("EMBED_BASE_URL") {
            self.base_url = v;
        }
        if let Ok(v) = std::env::var("EMBED_MODEL") {
            self.model = v;
        }
        if let Ok(v) = std::env::var("EMBED_API_KEY") {
            self.api_key = Some(v);
        }
        self
    }
}

/// Client for an OpenAI-compatible `/v1/embeddings` endpoint.
pub struct OpenAiEmbedder {
    config: OpenAiEmbedderConfig,
    client: reqwest::blocking::Client,
}

impl OpenAiEmbedder {
    pub fn new(config: OpenAiEmbedderConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Backend(e.to_string()))?;
        Ok(Self { config, client })
    }
}

impl EmbedBackend for OpenAiEmbedder {
    fn model_id(&self) -> String {
        format!("openai-embed:{}", self.config.model)
    }

    fn batch_size(&self) -> usize {
        self.config.batch_size
    }

    fn max_in_flight(&self) -> usize {
        self.config.max_in_flight
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let url = format!("{}/v1/embeddings", self.config.base_url.trim_end_matches('/'));
        let body = json!({"model": self.config.model, "input": texts});
        let resp = with_retries(self.config.max_retries, self.config.backoff_ms, || {
            post_json(&self.client, &url, self.config.api_key.as_deref(), &body)
        })
        .map_err(Error::Backend)?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Backend("embedding response has no data".into()))?;
        let mut rows: Vec<(u64, Vec<f64>)> = Vec::with_capacity(data.len());
        for (i, d) in data.iter().enumerate() {
            let idx = d.get("index").and_then(Value::as_u64).unwrap_or(i as u64);
            let v = d
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Backend("data entry without embedding".into()))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| Error::Backend("non-numeric embedding".into())))
                .collect::<Result<Vec<f64>>>()?;
            rows.push((idx, v));
        }
        rows.sort_by_key(|r| r.0);
        Ok(rows.into_iter().map(|r| r.1).collect())
    }
}
