//! In-memory end-to-end runs on synthetic data with mock backends.

use serde::{Deserialize, Serialize};

use super::steps::{self, Dataset};
use super::config::{CohortConfig, DataConfig};
use crate::ehr::{split_dataset, Preset, TaskKind};
use crate::embed::MockEmbedder;
use crate::encoder::EncoderTrainConfig;
use crate::error::Result;
use crate::fusion::TrainConfig;
use crate::llm::{MockLlm, SamplingConfig};
use crate::metrics::EvalReport;
use crate::par::Execution;
use crate::prompt::{PromptConfig, Template};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub n_patients: usize,
    pub n_cohorts: usize,
    pub task: TaskKind,
    pub informativeness: f64,
    /// Analyses sampled per patient.
    pub k: usize,
    /// Analyses used by each trained variant; `0` is the encoder-only baseline.
    pub k_values: Vec<usize>,
    pub embed_dim: usize,
    pub cohort: CohortConfig,
    pub encoder: EncoderTrainConfig,
    pub fusion: TrainConfig,
}

impl ExperimentConfig {
    pub fn new(task: TaskKind, informativeness: f64) -> Self {
        Self {
            preset: Preset::Mimic3,
            n_patients: 2000,
            n_cohorts: 4,
            task,
            informativeness,
            k: 8,
            k_values: vec![0, 8],
            embed_dim: 64,
            cohort: CohortConfig::default(),
            encoder: EncoderTrainConfig::default(),
            fusion: TrainConfig::new(task),
        }
    }
}

/// One report per entry of `k_values`, in the same order.
pub fn run_experiment(config: &ExperimentConfig, seed: u64, exec: Execution) -> Result<Vec<EvalReport>> {
    let data = DataConfig::Synth { preset: config.preset, n_patients: config.n_patients, n_cohorts: config.n_cohorts };
    let Dataset { records, truths, group_mortality_pct } = steps::load_dataset(&data, seed)?;
    let split = split_dataset(&records, seed)?;
    let train = steps::select(&records, &split.train)?;
    let cohorts = steps::fit_cohorts(&train, &config.cohort, seed, exec)?;
    let prompts =
        steps::build_prompts(&cohorts, &records, config.cohort.theta, &PromptConfig::default(), &Template::default(), exec)?;
    let llm = MockLlm::new(&truths, group_mortality_pct, config.informativeness, seed);
    let sampling = SamplingConfig { k: config.k, seed, ..Default::default() };
    let analyses = steps::analyze(&prompts, &sampling, &llm, None)?;
    let bundles = steps::bundle_map(steps::embed_analyses(&prompts, &analyses, &MockEmbedder::new(config.embed_dim, seed), None)?);
    let enc_cfg = EncoderTrainConfig { seed, ..config.encoder.clone() };
    let (encoder, _) = steps::pretrain(&records, &split, config.task, &enc_cfg, exec)?;
    config
        .k_values
        .iter()
        .map(|&k| {
            let cfg = TrainConfig { seed, task: config.task, k: Some(k), ..config.fusion.clone() };
            Ok(steps::train_and_evaluate(&encoder, &records, &split, &bundles, &cfg, exec)?.report)
        })
        .collect()
}
