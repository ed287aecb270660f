use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Completion, LlmBackend, SamplingConfig};
use crate::error::{Error, Result};
use crate::prompt::PromptBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ApiMode {
    #[default]
    Completions,
    Chat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpenAiLlmConfig {
    pub base_url: String,
    pub model: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub mode: ApiMode,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
}

impl Default for OpenAiLlmConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000".into(),
            model: "default".into(),
            api_key: None,
            mode: ApiMode::Completions,
            max_retries: 3,
            backoff_ms: 500,
            timeout_secs: 600,
            max_in_flight: 8,
        }
    }
}

impl OpenAiLlmConfig {
    /// Applies `LLM_BASE_URL`, `LLM_MODEL` and `LLM_API_KEY` when set.
    pub fn with_env(mut self) -> Self {
        if let Ok(v) = std::env::var("LLM_BASE_URL") {
            self.base_url = v;
        }
        if let Ok(v) = std::env::var("LLM_MODEL") {
            self.model = v;
        }
        if let Ok(v) = std::env::var("LLM_API_KEY") {
            self.api_key = Some(v);
        }
        self
    }
}

/// Client for an OpenAI-compatible `/v1/completions` or
/// `/v1/chat/completions` endpoint.
pub struct OpenAiLlm {
    config: OpenAiLlmConfig,
    client: reqwest::blocking::Client,
}

/// Failure of one HTTP attempt.
pub(crate) enum Attempt {
    Retry(String),
    Fatal(String),
}

pub(crate) fn post_json(
    client: &reqwest::blocking::Client,
    url: &str,
    api_key: Option<&str>,
    body: &Value,
) -> std::result::Result<Value, Attempt> {
    let mut req = client.post(url).json(body);
    if let Some(key) = api_key {
        req = req.bearer_auth(key);
    }
    let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
    let status = resp.status();
    let text = resp.text().map_err(|e| Attempt::Retry(e.to_string()))?;
    if status.is_server_error() || status.as_u16() == 429 {
        return Err(Attempt::Retry(format!("HTTP {status}: {text}")));
    }
    if !status.is_success() {
        return Err(Attempt::Fatal(format!("HTTP {status}: {text}")));
    }
    serde_json::from_str(&text).map_err(|e| Attempt::Fatal(format!("invalid JSON response: {e}")))
}

/// Retries transient failures with exponential backoff.
pub(crate) fn with_retries<T>(
    max_retries: u32,
    backoff_ms: u64,
    mut f: impl FnMut() -> std::result::Result<T, Attempt>,
) -> std::result::Result<T, String> {
    let mut attempt = 0;
    loop {
        match f() {
            Ok(v) => return Ok(v),
            Err(Attempt::Fatal(msg)) => return Err(msg),
            Err(Attempt::Retry(msg)) => {
                if attempt >= max_retries {
                    return Err(format!("{msg} (after {} attempts)", attempt + 1));
                }
                log::warn!("transient backend failure, retrying: {msg}");
                std::thread::sleep(Duration::from_millis(backoff_ms << attempt));
                attempt += 1;
            }
        }
    }
}

impl OpenAiLlm {
    pub fn new(config: OpenAiLlmConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Backend(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn url(&self) -> String {
        let base = self.config.base_url.trim_end_matches('/');
        match self.config.mode {
            ApiMode::Completions => format!("{base}/v1/completions"),
            ApiMode::Chat => format!("{base}/v1/chat/completions"),
        }
    }

    fn body(&self, prompt: &str, n: usize, config: &SamplingConfig) -> Value {
        match self.config.mode {
            ApiMode::Completions => json!({
                "model": self.config.model,
                "prompt": prompt,
                "n": n,
                "temperature": config.temperature,
                "max_tokens": config.max_tokens,
                "logprobs": 1,
                "seed": config.seed,
            }),
            ApiMode::Chat => json!({
                "model": self.config.model,
                "messages": [{"role": "user", "content": prompt}],
                "n": n,
                "temperature": config.temperature,
                "max_tokens": config.max_tokens,
                "logprobs": true,
                "seed": config.seed,
            }),
        }
    }
}

fn parse_choice(choice: &Value, mode: ApiMode) -> Result<Completion> {
    let (text, logprobs) = match mode {
        ApiMode::Completions => {
            let text = choice.get("text").and_then(Value::as_str);
            let lp = choice
                .pointer("/logprobs/token_logprobs")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(Value::as_f64).collect::<Vec<_>>());
            (text, lp)
        }
        ApiMode::Chat => {
            let text = choice.pointer("/message/content").and_then(Value::as_str);
            let lp = choice.pointer("/logprobs/content").and_then(Value::as_array).map(|a| {
                a.iter().filter_map(|t| t.get("logprob").and_then(Value::as_f64)).collect::<Vec<_>>()
            });
            (text, lp)
        }
    };
    let text = text.ok_or_else(|| Error::Backend("choice without text".into()))?;
    Ok(Completion {
        text: text.to_string(),
        token_logprobs: logprobs.filter(|v| !v.is_empty()),
    })
}

/// Choices sorted by their `index` field when present.
pub(crate) fn parse_choices(resp: &Value, mode: ApiMode) -> Result<Vec<Completion>> {
    let choices = resp
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Backend("response has no choices".into()))?;
    let mut indexed: Vec<(u64, &Value)> = choices
        .iter()
        .enumerate()
        .map(|(i, c)| (c.get("index").and_then(Value::as_u64).unwrap_or(i as u64), c))
        .collect();
    indexed.sort_by_key(|(i, _)| *i);
    indexed.into_iter().map(|(_, c)| parse_choice(c, mode)).collect()
}

impl LlmBackend for OpenAiLlm {
    fn backend_id(&self) -> String {
        format!("openai:{}:{:?}", self.config.model, self.config.mode).to_lowercase()
    }

    fn max_in_flight(&self) -> usize {
        self.config.max_in_flight
    }

    fn complete(&self, prompt: &PromptBundle, config: &SamplingConfig) -> Result<Vec<Completion>> {
        let url = self.url();
        let mut out = Vec::with_capacity(config.k);
        // Some servers cap or ignore `n`; keep asking until K samples arrive.
        let mut round = 0;
        while out.len() < config.k {
            let n = config.k - out.len();
            let cfg = SamplingConfig { seed: config.seed.wrapping_add(round), ..config.clone() };
            let body = self.body(&prompt.text, n, &cfg);
            let resp = with_retries(self.config.max_retries, self.config.backoff_ms, || {
                post_json(&self.client, &url, self.config.api_key.as_deref(), &body)
            })
            .map_err(|msg| Error::Gateway { patient_id: prompt.patient_id.clone(), msg })?;
            let got = parse_choices(&resp, self.config.mode)?;
            if got.is_empty() {
                return Err(Error::Gateway {
                    patient_id: prompt.patient_id.clone(),
                    msg: "backend returned zero choices".into(),
                });
            }
            out.extend(got.into_iter().take(n));
            round += 1;
        }
        Ok(out)
    }
}
