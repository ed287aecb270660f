use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::PatientRecord;
use crate::error::{Error, Result};

/// Ordered code vocabulary. Built from the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    codes: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(codes: Vec<String>) -> Self {
        let index = codes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i))
            .collect();
        Vocab { codes, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.codes
    }
}

impl Vocab {
    /// Sorted union of every code seen in `records`.
    pub fn build<'a>(records: impl IntoIterator<Item = &'a PatientRecord>) -> Self {
        let set: BTreeSet<&str> = records.into_iter().flat_map(|r| r.all_codes()).collect();
        Vocab::from(set.into_iter().map(str::to_owned).collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn get(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn hash(&self) -> String {
        crate::math::sha256_hex(self.codes.join("\n").as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiHot {
    pub vector: Vec<u8>,
    pub oov: usize,
}

/// Binary presence vector over `vocab` for the union of the three code sets.
pub fn multi_hot_encode(record: &PatientRecord, vocab: &Vocab) -> Result<MultiHot> {
    if vocab.is_empty() {
        return Err(Error::config("empty vocabulary"));
    }
    let mut vector = vec![0u8; vocab.len()];
    let mut oov = 0;
    for code in record.all_codes() {
        match vocab.get(code) {
            Some(i) => vector[i] = 1,
            None => oov += 1,
        }
    }
    Ok(MultiHot { vector, oov })
}
