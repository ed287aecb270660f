//! Stage bodies shared by the on-disk pipeline and the in-memory runner.

use std::collections::HashMap;

use super::config::{BackendKind, CohortConfig, DataConfig, EmbedConfig, LlmConfig};
use crate::cohort::{cohort_statistics, select_cohorts, CohortArtifact, CohortModel, CohortStats, FittedReducer};
use crate::ehr::{
    generate_synthetic_dataset, load_patients_jsonl, DatasetSplit, PatientRecord, PlantedTruth, SynthSpec, TaskKind,
    Vocab,
};
use crate::embed::{embed_samples, EmbedBackend, EmbeddingCache, MockEmbedder, OpenAiEmbedder};
use crate::encoder::{pretrain_encoder, EncoderTrainConfig, FrozenEncoder, PretrainReport};
use crate::error::{Error, Result};
use crate::fusion::{build_examples, train_fusion, AnalysisBundle, FusionOutcome, SplitExamples, TrainConfig};
use crate::llm::{sample_all, AnalysisCache, AnalysisSample, LlmBackend, MockLlm, OpenAiLlm, SamplingConfig};
use crate::par::Execution;
use crate::prompt::{build_prompt_with, CharsPerToken, PromptBundle, PromptConfig, Template};

/// Records plus, for synthetic data, the hidden generator state.
pub struct Dataset {
    pub records: Vec<PatientRecord>,
    pub truths: Vec<PlantedTruth>,
    /// Planted mortality rate per generator cohort, in percent.
    pub group_mortality_pct: Vec<f64>,
}

pub fn load_dataset(data: &DataConfig, seed: u64) -> Result<Dataset> {
    match data {
        DataConfig::Synth { preset, n_patients, n_cohorts } => {
            let spec = SynthSpec::from_preset(*preset, *n_patients, *n_cohorts);
            let (records, truths) = generate_synthetic_dataset(&spec, seed)?;
            let group_mortality_pct = spec.cohorts.iter().map(|c| c.mortality_rate * 100.0).collect();
            Ok(Dataset { records, truths, group_mortality_pct })
        }
        DataConfig::Path { path } => {
            if !path.exists() {
                return Err(Error::config(format!("data file {} does not exist", path.display())));
            }
            let report = load_patients_jsonl(path)?;
            Ok(Dataset { records: report.records, truths: vec![], group_mortality_pct: vec![] })
        }
    }
}

/// Records of one split, in split order.
pub fn select<'a>(records: &'a [PatientRecord], ids: &[String]) -> Result<Vec<&'a PatientRecord>> {
    let by_id: HashMap<&str, &PatientRecord> = records.iter().map(|r| (r.patient_id.as_str(), r)).collect();
    ids.iter()
        .map(|id| by_id.get(id.as_str()).copied().ok_or_else(|| Error::data(format!("split names unknown patient {id}"))))
        .collect()
}

pub fn fit_cohorts(train: &[&PatientRecord], cfg: &CohortConfig, seed: u64, exec: Execution) -> Result<CohortArtifact> {
    let reducer = FittedReducer::fit(train, cfg.reducer(seed), exec)?;
    let points = reducer.training_embeddings();
    let mixture_params = cfg.mixture(seed);
    let model = CohortModel::fit(&points, mixture_params, exec)?;
    let resp = model.responsibilities_all(&points, exec)?;
    let by_id: HashMap<&str, &PatientRecord> = train.iter().map(|r| (r.patient_id.as_str(), *r)).collect();
    let owned: Vec<PatientRecord> = reducer
        .train_ids
        .iter()
        .map(|id| by_id.get(id.as_str()).map(|r| (*r).clone()).ok_or_else(|| Error::data(format!("reducer lost patient {id}"))))
        .collect::<Result<_>>()?;
    let stats = cohort_statistics(&owned, &resp)?;
    log::info!("{} effective cohorts out of {}", model.n_effective(), model.max_components);
    Ok(CohortArtifact { reducer, mixture_params, model, stats })
}

/// Cohort memberships for every record.
pub fn memberships(cohorts: &CohortArtifact, records: &[PatientRecord], exec: Execution) -> Result<Vec<Vec<f64>>> {
    let points = exec.try_map(records, |r| cohorts.reducer.place(r))?;
    cohorts.model.responsibilities_all(&points, exec)
}

/// The cohorts shown in one patient's prompt, most probable first.
pub fn prompt_cohorts(cohorts: &CohortArtifact, resp: &[f64], theta: f64) -> Vec<(CohortStats, f64)> {
    select_cohorts(resp, &cohorts.model.effective_mask, theta)
        .into_iter()
        .filter_map(|(k, p)| cohorts.stats.iter().find(|s| s.cohort_id == k).map(|s| (s.clone(), p)))
        .collect()
}

pub fn build_prompts(
    cohorts: &CohortArtifact,
    records: &[PatientRecord],
    theta: f64,
    config: &PromptConfig,
    template: &Template,
    exec: Execution,
) -> Result<Vec<PromptBundle>> {
    let resp = memberships(cohorts, records, exec)?;
    let pairs: Vec<(&PatientRecord, &Vec<f64>)> = records.iter().zip(&resp).collect();
    exec.try_map(&pairs, |(r, m)| build_prompt_with(r, &prompt_cohorts(cohorts, m, theta), config, template, &CharsPerToken))
}

pub fn llm_backend(cfg: &LlmConfig, data: &Dataset, seed: u64) -> Result<Box<dyn LlmBackend>> {
    Ok(match cfg.backend {
        BackendKind::Mock => {
            Box::new(MockLlm::new(&data.truths, data.group_mortality_pct.clone(), cfg.informativeness, seed))
        }
        BackendKind::Openai => Box::new(OpenAiLlm::new(cfg.openai.clone())?),
    })
}

pub fn embed_backend(cfg: &EmbedConfig, seed: u64) -> Result<Box<dyn EmbedBackend>> {
    Ok(match cfg.backend {
        BackendKind::Mock => Box::new(MockEmbedder::new(cfg.dim, seed)),
        BackendKind::Openai => Box::new(OpenAiEmbedder::new(cfg.openai.clone())?),
    })
}

pub fn analyze(
    prompts: &[PromptBundle],
    sampling: &SamplingConfig,
    backend: &dyn LlmBackend,
    cache: Option<&mut AnalysisCache>,
) -> Result<Vec<Vec<AnalysisSample>>> {
    sample_all(prompts, sampling, backend, cache)
}

/// Embeds every analysis and groups them per patient.
pub fn embed_analyses(
    prompts: &[PromptBundle],
    analyses: &[Vec<AnalysisSample>],
    backend: &dyn EmbedBackend,
    cache: Option<&mut EmbeddingCache>,
) -> Result<Vec<AnalysisBundle>> {
    let items: Vec<(String, usize, String)> = prompts
        .iter()
        .zip(analyses)
        .flat_map(|(p, s)| s.iter().map(move |a| (p.patient_id.clone(), a.sample_index, a.text.clone())))
        .collect();
    let vectors = embed_samples(&items, backend, cache)?;
    let mut it = vectors.into_iter();
    Ok(prompts
        .iter()
        .zip(analyses)
        .map(|(p, s)| AnalysisBundle {
            patient_id: p.patient_id.clone(),
            perplexities: s.iter().map(|a| a.perplexity).collect(),
            embeddings: it.by_ref().take(s.len()).map(|e| e.vector).collect(),
        })
        .collect())
}

pub fn pretrain(
    records: &[PatientRecord],
    split: &DatasetSplit,
    task: TaskKind,
    config: &EncoderTrainConfig,
    exec: Execution,
) -> Result<(FrozenEncoder, PretrainReport)> {
    let train = select(records, &split.train)?;
    let val = select(records, &split.val)?;
    let vocab = Vocab::build(train.iter().copied());
    pretrain_encoder(&train, &val, vocab, task, config, exec)
}

pub fn split_examples(
    encoder: &FrozenEncoder,
    records: &[PatientRecord],
    split: &DatasetSplit,
    bundles: &HashMap<String, AnalysisBundle>,
    task: TaskKind,
    k: Option<usize>,
    exec: Execution,
) -> Result<SplitExamples> {
    let part = |ids: &[String]| build_examples(encoder, &select(records, ids)?, bundles, task, k, exec);
    Ok(SplitExamples { train: part(&split.train)?, val: part(&split.val)?, test: part(&split.test)? })
}

pub fn train_and_evaluate(
    encoder: &FrozenEncoder,
    records: &[PatientRecord],
    split: &DatasetSplit,
    bundles: &HashMap<String, AnalysisBundle>,
    config: &TrainConfig,
    exec: Execution,
) -> Result<FusionOutcome> {
    let data = split_examples(encoder, records, split, bundles, config.task, config.k, exec)?;
    train_fusion(encoder, &data, config, exec)
}

pub fn bundle_map(bundles: Vec<AnalysisBundle>) -> HashMap<String, AnalysisBundle> {
    bundles.into_iter().map(|b| (b.patient_id.clone(), b)).collect()
}
