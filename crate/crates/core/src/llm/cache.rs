use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AnalysisSample, SamplingConfig};
use crate::artifact::write_atomic;
use crate::error::{Error, Result};
use crate::math::sha256_hex;

/// Content key over everything that determines a prompt's samples.
pub fn cache_key(prompt_text: &str, config: &SamplingConfig, backend_id: &str) -> String {
    let material = serde_json::json!({
        "prompt": prompt_text,
        "k": config.k,
        "temperature": config.temperature,
        "max_tokens": config.max_tokens,
        "backend_id": backend_id,
        "seed": config.seed,
    });
    sha256_hex(material.to_string().as_bytes())
}

#[derive(Serialize, Deserialize)]
struct Line {
    key: String,
    patient_id: String,
    sample_index: usize,
    text: String,
    logprobs: Vec<f64>,
    perplexity: f64,
    backend_id: String,
}

/// JSONL store with one line per sample, rewritten atomically on flush.
#[derive(Debug, Default)]
pub struct AnalysisCache {
    path: Option<PathBuf>,
    entries: BTreeMap<String, (String, Vec<AnalysisSample>)>,
    dirty: bool,
}

impl AnalysisCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens `path`, reading existing lines if the file exists.
    pub fn open(path: &Path) -> Result<Self> {
        let mut cache = Self { path: Some(path.to_path_buf()), ..Self::default() };
        if !path.exists() {
            return Ok(cache);
        }
        let file = std::fs::File::open(path)?;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let l: Line = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            let entry = cache.entries.entry(l.key).or_insert_with(|| (l.patient_id, Vec::new()));
            entry.1.push(AnalysisSample {
                text: l.text,
                token_logprobs: l.logprobs,
                perplexity: l.perplexity,
                backend_id: l.backend_id,
                sample_index: l.sample_index,
            });
        }
        for (_, samples) in cache.entries.values_mut() {
            samples.sort_by_key(|s| s.sample_index);
        }
        Ok(cache)
    }

    pub fn get(&self, key: &str) -> Option<&Vec<AnalysisSample>> {
        self.entries.get(key).map(|e| &e.1)
    }

    pub fn insert(&mut self, key: String, patient_id: &str, samples: Vec<AnalysisSample>) {
        self.entries.insert(key, (patient_id.to_string(), samples));
        self.dirty = true;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn flush(&mut self) -> Result<()> {
        let Some(path) = &self.path else { return Ok(()) };
        if !self.dirty {
            return Ok(());
        }
        let mut out = String::new();
        for (key, (pid, samples)) in &self.entries {
            for s in samples {
                let line = Line {
                    key: key.clone(),
                    patient_id: pid.clone(),
                    sample_index: s.sample_index,
                    text: s.text.clone(),
                    logprobs: s.token_logprobs.clone(),
                    perplexity: s.perplexity,
                    backend_id: s.backend_id.clone(),
                };
                out.push_str(&serde_json::to_string(&line)?);
                out.push('\n');
            }
        }
        write_atomic(path, out.as_bytes())?;
        self.dirty = false;
        Ok(())
    }
}
