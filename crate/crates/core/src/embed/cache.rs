use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifact::write_atomic;
use crate::error::{Error, Result};
use crate::math::sha256_hex;

#[derive(Debug, Serialize, Deserialize)]
struct Line {
    key: String,
    patient_id: String,
    sample_index: usize,
    model_id: String,
    vector: Vec<f64>,
}

fn key(model_id: &str, text: &str) -> String {
    sha256_hex(serde_json::json!([model_id, text]).to_string().as_bytes())
}

/// JSONL store keyed by (model, text), one line per analysis sample.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    path: Option<PathBuf>,
    entries: BTreeMap<String, Line>,
    dirty: bool,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: &Path) -> Result<Self> {
        let mut c = Self { path: Some(path.to_path_buf()), ..Self::default() };
        if !path.exists() {
            return Ok(c);
        }
        for (i, line) in BufReader::new(std::fs::File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let l: Line = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            c.entries.insert(l.key.clone(), l);
        }
        Ok(c)
    }

    pub fn get(&self, model_id: &str, text: &str) -> Option<&Vec<f64>> {
        self.entries.get(&key(model_id, text)).map(|l| &l.vector)
    }

    pub fn insert(&mut self, model_id: &str, patient_id: &str, sample_index: usize, text: &str, vector: Vec<f64>) {
        let k = key(model_id, text);
        self.entries.insert(
            k.clone(),
            Line { key: k, patient_id: patient_id.into(), sample_index, model_id: model_id.into(), vector },
        );
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
        for l in self.entries.values() {
            out.push_str(&serde_json::to_string(l)?);
            out.push('\n');
        }
        write_atomic(path, out.as_bytes())?;
        self.dirty = false;
        Ok(())
    }
}
