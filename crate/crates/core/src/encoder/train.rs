use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{forward_trace, EncodedRecord, EncoderParams, FrozenEncoder, CODE_DIM};
use crate::ehr::{PatientRecord, TaskKind, Vocab};
use crate::error::{Error, Result};
use crate::loss::{loss_and_grad, probabilities};
use crate::metrics::EvalReport;
use crate::optim::{Adam, AdamConfig};
use crate::par::Execution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderTrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        Self { lr: 1e-3, epochs: 20, batch: 256, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub best_epoch: Option<usize>,
    pub val_auroc: Vec<f64>,
}

/// Gradient chunks per batch. Fixed so sums do not depend on thread count.
const CHUNKS: usize = 8;

fn accumulate(p: &EncoderParams, r: &EncodedRecord, label: usize, task: TaskKind, g: &mut EncoderParams) -> Result<f64> {
    let t = forward_trace(p, r);
    let logits = p.head.forward(&t.h);
    let (loss, dlogits) = loss_and_grad(&logits, label, task)?;
    let dh = p.head.backward(&t.h, &dlogits, &mut g.head);
    let dpre: Vec<f64> = dh.iter().zip(&t.h).map(|(d, h)| d * (1.0 - h * h)).collect();
    let dx = p.hidden.backward(&t.input, &dpre, &mut g.hidden);
    for (k, set) in r.codes.iter().enumerate() {
        if set.is_empty() {
            continue;
        }
        let scale = 1.0 / set.len() as f64;
        let dpool = &dx[k * CODE_DIM..(k + 1) * CODE_DIM];
        for &i in set {
            crate::math::axpy(scale, dpool, g.code_embeddings.row_mut(i));
        }
    }
    p.demographic.backward(&r.demographics, &dx[3 * CODE_DIM..], &mut g.demographic);
    Ok(loss)
}

fn batch_gradient(
    p: &EncoderParams,
    data: &[EncodedRecord],
    labels: &[usize],
    batch: &[usize],
    task: TaskKind,
    exec: Execution,
) -> Result<EncoderParams> {
    let per = batch.len().div_ceil(CHUNKS).max(1);
    let chunks: Vec<&[usize]> = batch.chunks(per).collect();
    let parts = exec.try_map(&chunks, |chunk| -> Result<EncoderParams> {
        let mut g = p.zeros_like();
        for &i in *chunk {
            accumulate(p, &data[i], labels[i], task, &mut g)?;
        }
        Ok(g)
    })?;
    let mut total = p.zeros_like();
    let n = batch.len() as f64;
    for part in &parts {
        for (t, s) in total.blocks_mut().into_iter().zip(part.blocks()) {
            for (a, b) in t.iter_mut().zip(s) {
                *a += b;
            }
        }
    }
    for b in total.blocks_mut() {
        b.iter_mut().for_each(|x| *x /= n);
    }
    Ok(total)
}

fn validation_score(p: &EncoderParams, data: &[EncodedRecord], labels: &[usize], task: TaskKind, exec: Execution) -> f64 {
    let probs = exec.map(data, |r| probabilities(&p.head.forward(&forward_trace(p, r).h), task));
    EvalReport::metrics_for(task, &probs, labels)
        .ok()
        .and_then(|m| m.get("auroc").copied())
        .unwrap_or(f64::NAN)
}

/// Trains the encoder with its task head, keeps the epoch with the best
/// validation AUROC, and freezes it.
pub fn pretrain_encoder(
    train: &[&PatientRecord],
    val: &[&PatientRecord],
    vocab: Vocab,
    task: TaskKind,
    config: &EncoderTrainConfig,
    exec: Execution,
) -> Result<(FrozenEncoder, PretrainReport)> {
    if vocab.is_empty() {
        return Err(Error::config("encoder vocabulary is empty"));
    }
    if config.lr <= 0.0 || config.batch == 0 {
        return Err(Error::config("encoder training needs lr > 0 and batch > 0"));
    }
    let labels: Vec<usize> = train.iter().map(|r| task.label(&r.labels)).collect();
    let mut seen = labels.clone();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() < 2 {
        return Err(Error::DegenerateTask(format!("training labels for {task} contain a single class")));
    }
    let data: Vec<EncodedRecord> = train.iter().map(|r| EncodedRecord::new(r, &vocab)).collect();
    let val_data: Vec<EncodedRecord> = val.iter().map(|r| EncodedRecord::new(r, &vocab)).collect();
    let val_labels: Vec<usize> = val.iter().map(|r| task.label(&r.labels)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = EncoderParams::init(vocab.len(), task, &mut rng);
    let lens: Vec<usize> = params.blocks().iter().map(|b| b.len()).collect();
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), &lens);
    let mut best = params.clone();
    let mut best_score = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut trace = Vec::with_capacity(config.epochs);
    if config.epochs == 0 {
        log::warn!("encoder epochs = 0; returning untrained parameters");
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch) {
            let g = batch_gradient(&params, &data, &labels, batch, task, exec)?;
            adam.step(params.blocks_mut(), g.blocks());
        }
        let score = validation_score(&params, &val_data, &val_labels, task, exec);
        trace.push(score);
        if best_epoch.is_none() || score > best_score {
            best_score = score;
            best = params.clone();
            best_epoch = Some(epoch);
        }
    }
    if !best.is_finite() {
        return Err(Error::Numerical("encoder parameters diverged".into()));
    }
    let frozen = FrozenEncoder::new(best, vocab, task)?;
    Ok((frozen, PretrainReport { best_epoch, val_auroc: trace }))
}
