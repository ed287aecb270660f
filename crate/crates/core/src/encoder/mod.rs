//! Bag-of-embeddings record encoder, pretrained per task and then frozen.

mod train;

pub use train::{pretrain_encoder, EncoderTrainConfig, PretrainReport};

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{load_tagged, save_tagged};
use crate::ehr::{CodedConcept, Gender, PatientRecord, TaskKind, Vocab};
use crate::error::{Error, Result};
use crate::math::{checksum_f64, Affine, Mat};

pub const CODE_DIM: usize = 32;
pub const DEMO_IN: usize = 4;
pub const DEMO_DIM: usize = 8;
pub const HIDDEN_DIM: usize = 128;
pub const ENCODER_MAGIC: &str = "ENCv1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub code_embeddings: Mat,
    pub demographic: Affine,
    pub hidden: Affine,
    pub head: Affine,
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(vocab_len: usize, task: TaskKind, rng: &mut R) -> Self {
        Self {
            code_embeddings: Mat::glorot(vocab_len, CODE_DIM, rng),
            demographic: Affine::glorot(DEMO_DIM, DEMO_IN, rng),
            hidden: Affine::glorot(HIDDEN_DIM, 3 * CODE_DIM + DEMO_DIM, rng),
            head: Affine::glorot(task.output_dim(), HIDDEN_DIM, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            code_embeddings: Mat::zeros(self.code_embeddings.rows, self.code_embeddings.cols),
            demographic: Affine::zeros(self.demographic.out_dim(), self.demographic.in_dim()),
            hidden: Affine::zeros(self.hidden.out_dim(), self.hidden.in_dim()),
            head: Affine::zeros(self.head.out_dim(), self.head.in_dim()),
        }
    }

    pub(crate) fn blocks(&self) -> Vec<&[f64]> {
        vec![
            &self.code_embeddings.data,
            &self.demographic.weight.data,
            &self.demographic.bias,
            &self.hidden.weight.data,
            &self.hidden.bias,
            &self.head.weight.data,
            &self.head.bias,
        ]
    }

    pub(crate) fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.code_embeddings.data,
            &mut self.demographic.weight.data,
            &mut self.demographic.bias,
            &mut self.hidden.weight.data,
            &mut self.hidden.bias,
            &mut self.head.weight.data,
            &mut self.head.bias,
        ]
    }

    pub fn checksum(&self) -> String {
        checksum_f64(self.blocks())
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

/// A record reduced to sorted vocabulary indices and demographic features.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedRecord {
    pub codes: [Vec<usize>; 3],
    pub demographics: [f64; DEMO_IN],
}

impl EncodedRecord {
    pub fn new(record: &PatientRecord, vocab: &Vocab) -> Self {
        let idx = |set: &[CodedConcept]| {
            let mut v: Vec<usize> = set.iter().filter_map(|c| vocab.get(&c.code)).collect();
            v.sort_unstable();
            v
        };
        let g = match record.gender {
            Gender::Male => [1.0, 0.0, 0.0],
            Gender::Female => [0.0, 1.0, 0.0],
            Gender::Other => [0.0, 0.0, 1.0],
        };
        Self {
            codes: [idx(&record.conditions), idx(&record.procedures), idx(&record.medications)],
            demographics: [record.age as f64 / 100.0, g[0], g[1], g[2]],
        }
    }
}

/// Intermediate values kept for the backward pass.
pub(crate) struct Trace {
    pub input: Vec<f64>,
    pub h: Vec<f64>,
}

pub(crate) fn forward_trace(p: &EncoderParams, r: &EncodedRecord) -> Trace {
    let mut input = Vec::with_capacity(3 * CODE_DIM + DEMO_DIM);
    for set in &r.codes {
        let mut pooled = vec![0.0; CODE_DIM];
        if !set.is_empty() {
            for &i in set {
                crate::math::axpy(1.0, p.code_embeddings.row(i), &mut pooled);
            }
            let n = set.len() as f64;
            pooled.iter_mut().for_each(|x| *x /= n);
        }
        input.extend(pooled);
    }
    input.extend(p.demographic.forward(&r.demographics));
    let h = p.hidden.forward(&input).into_iter().map(f64::tanh).collect();
    Trace { input, h }
}

/// Frozen parameters with the vocabulary they were trained on. Nothing hands
/// out mutable access.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenEncoder {
    params: EncoderParams,
    vocab: Vocab,
    task: TaskKind,
    checksum: String,
}

impl FrozenEncoder {
    pub fn new(params: EncoderParams, vocab: Vocab, task: TaskKind) -> Result<Self> {
        if params.code_embeddings.rows != vocab.len() {
            return Err(Error::config(format!(
                "encoder has {} code rows but vocabulary has {} codes",
                params.code_embeddings.rows,
                vocab.len()
            )));
        }
        let checksum = params.checksum();
        Ok(Self { params, vocab, task, checksum })
    }

    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    /// Checksum recorded when the parameters were frozen.
    pub fn frozen_checksum(&self) -> &str {
        &self.checksum
    }

    /// Checksum recomputed from the current parameter bits.
    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    pub fn dim(&self) -> usize {
        HIDDEN_DIM
    }

    /// Errors unless `vocab` is the one the encoder was trained with.
    pub fn check_vocab(&self, vocab: &Vocab) -> Result<()> {
        if vocab.hash() != self.vocab.hash() {
            return Err(Error::config("vocabulary does not match the encoder checkpoint"));
        }
        Ok(())
    }

    pub fn encode(&self, record: &PatientRecord) -> Vec<f64> {
        self.encode_encoded(&EncodedRecord::new(record, &self.vocab))
    }

    pub fn encode_encoded(&self, record: &EncodedRecord) -> Vec<f64> {
        forward_trace(&self.params, record).h
    }

    /// Pretraining head output, for diagnostics.
    pub fn head_logits(&self, record: &PatientRecord) -> Vec<f64> {
        self.params.head.forward(&self.encode(record))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint { vocab_hash: self.vocab.hash(), encoder: self.clone() };
        save_tagged(path, ENCODER_MAGIC, &ckpt)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = load_tagged(path, ENCODER_MAGIC)?;
        let enc = ckpt.encoder;
        if enc.vocab.hash() != ckpt.vocab_hash {
            return Err(Error::Artifact { path: path.to_path_buf(), msg: "vocabulary hash mismatch".into() });
        }
        if enc.params.checksum() != enc.checksum {
            return Err(Error::Artifact { path: path.to_path_buf(), msg: "parameter checksum mismatch".into() });
        }
        Ok(enc)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    vocab_hash: String,
    encoder: FrozenEncoder,
}
