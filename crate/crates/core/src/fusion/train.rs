use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{accumulate_gradient, forward_trace, FusionExample};
use super::params::{FusionParams, FUSED_DIM};
use crate::ehr::{PatientRecord, TaskKind};
use crate::encoder::FrozenEncoder;
use crate::error::{Error, Result};
use crate::loss::probabilities;
use crate::math::sha256_hex;
use crate::metrics::{EvalReport, MetricSet};
use crate::optim::{Adam, AdamConfig};
use crate::par::Execution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default)]
    pub seed: u64,
    pub task: TaskKind,
    /// Analyses used per patient; `None` uses all that are present.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "default_fused")]
    pub d_f: usize,
}

fn default_lr() -> f64 {
    1e-4
}
fn default_epochs() -> usize {
    20
}
fn default_batch() -> usize {
    256
}
fn default_fused() -> usize {
    FUSED_DIM
}

impl TrainConfig {
    pub fn new(task: TaskKind) -> Self {
        Self { lr: 1e-4, epochs: 20, batch: 256, seed: 0, task, k: None, d_f: FUSED_DIM }
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("serializable").as_bytes())
    }

    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch == 0 || self.d_f < 2 {
            return Err(Error::config("fusion training needs lr > 0, batch > 0 and d_f >= 2"));
        }
        Ok(())
    }
}

/// Per-patient analyses: one perplexity and one embedding per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisBundle {
    pub patient_id: String,
    pub perplexities: Vec<f64>,
    pub embeddings: Vec<Vec<f64>>,
}

/// Encodes records and attaches their first `k` analyses.
pub fn build_examples(
    encoder: &FrozenEncoder,
    records: &[&PatientRecord],
    bundles: &HashMap<String, AnalysisBundle>,
    task: TaskKind,
    k: Option<usize>,
    exec: Execution,
) -> Result<Vec<FusionExample>> {
    exec.try_map(records, |r| {
        let h = encoder.encode(r);
        let label = task.label(&r.labels);
        if k == Some(0) {
            return Ok(FusionExample { h, z: vec![], perplexities: vec![], label });
        }
        let b = bundles
            .get(&r.patient_id)
            .ok_or_else(|| Error::data(format!("no analysis bundle for patient {}", r.patient_id)))?;
        if b.embeddings.len() != b.perplexities.len() {
            return Err(Error::data(format!("bundle for {} has mismatched lengths", r.patient_id)));
        }
        let n = k.map_or(b.embeddings.len(), |k| k.min(b.embeddings.len()));
        Ok(FusionExample {
            h,
            z: b.embeddings[..n].to_vec(),
            perplexities: b.perplexities[..n].to_vec(),
            label,
        })
    })
}

const CHUNKS: usize = 8;

fn batch_gradient(
    params: &FusionParams,
    data: &[FusionExample],
    batch: &[usize],
    task: TaskKind,
    exec: Execution,
) -> Result<FusionParams> {
    let scale = 1.0 / batch.len() as f64;
    let per = batch.len().div_ceil(CHUNKS).max(1);
    let chunks: Vec<&[usize]> = batch.chunks(per).collect();
    let parts = exec.try_map(&chunks, |chunk| -> Result<FusionParams> {
        let mut g = params.zeros_like();
        for &i in *chunk {
            accumulate_gradient(params, &data[i], task, scale, &mut g)?;
        }
        Ok(g)
    })?;
    let mut total = params.zeros_like();
    for p in &parts {
        total.add_scaled(1.0, p);
    }
    Ok(total)
}

pub fn predict_probabilities(
    params: &FusionParams,
    data: &[FusionExample],
    task: TaskKind,
    exec: Execution,
) -> Result<Vec<Vec<f64>>> {
    exec.try_map(data, |ex| {
        Ok(probabilities(&forward_trace(params, &ex.h, &ex.z, &ex.perplexities)?.logits, task))
    })
}

pub fn evaluate(params: &FusionParams, data: &[FusionExample], task: TaskKind, exec: Execution) -> Result<MetricSet> {
    let probs = predict_probabilities(params, data, task, exec)?;
    let labels: Vec<usize> = data.iter().map(|e| e.label).collect();
    EvalReport::metrics_for(task, &probs, &labels)
}

/// Examples for the three splits.
pub struct SplitExamples {
    pub train: Vec<FusionExample>,
    pub val: Vec<FusionExample>,
    pub test: Vec<FusionExample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutcome {
    pub params: FusionParams,
    pub report: EvalReport,
}

/// Mini-batch Adam on the head only. The epoch with the best validation
/// AUROC is restored and scored on the test split.
pub fn train_fusion(
    encoder: &FrozenEncoder,
    data: &SplitExamples,
    config: &TrainConfig,
    exec: Execution,
) -> Result<FusionOutcome> {
    config.validate()?;
    let before = encoder.checksum();
    if before != encoder.frozen_checksum() {
        return Err(Error::State("encoder parameters changed after freezing".into()));
    }
    if data.train.is_empty() || data.test.is_empty() {
        return Err(Error::Size("fusion training needs train and test examples".into()));
    }
    let task = config.task;
    let d_z = data
        .train
        .iter()
        .chain(&data.val)
        .chain(&data.test)
        .flat_map(|e| e.z.first())
        .map(Vec::len)
        .next()
        .unwrap_or(1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = FusionParams::init(encoder.dim(), d_z, config.d_f, task.output_dim(), &mut rng);
    let lens: Vec<usize> = params.blocks().iter().map(|b| b.len()).collect();
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), &lens);

    let val_score = |p: &FusionParams| -> Result<f64> {
        if data.val.is_empty() {
            return Ok(f64::NAN);
        }
        Ok(evaluate(p, &data.val, task, exec).ok().and_then(|m| m.get("auroc").copied()).unwrap_or(f64::NAN))
    };

    let mut best = params.clone();
    let mut best_score = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut trace = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch) {
            let g = batch_gradient(&params, &data.train, batch, task, exec)?;
            adam.step(params.blocks_mut(), g.blocks());
        }
        if !params.is_finite() {
            return Err(Error::Numerical(format!("fusion parameters diverged in epoch {epoch}")));
        }
        let score = val_score(&params)?;
        trace.push(score);
        if best_epoch.is_none() || score > best_score {
            best_score = score;
            best = params.clone();
            best_epoch = Some(epoch);
        }
    }
    if encoder.checksum() != before {
        return Err(Error::State("encoder parameters changed during fusion training".into()));
    }
    let metrics = evaluate(&best, &data.test, task, exec)?;
    let k_used = data.train.iter().map(|e| e.z.len()).max().unwrap_or(0);
    let variant = if k_used == 0 { "encoder-only".to_string() } else { format!("fused (K={k_used})") };
    Ok(FusionOutcome {
        params: best,
        report: EvalReport {
            task,
            variant,
            metrics,
            n_test: data.test.len(),
            seed: config.seed,
            config_hash: config.hash(),
            best_epoch,
            val_auroc_trace: trace,
        },
    })
}
