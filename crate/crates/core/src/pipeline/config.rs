use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cohort::{ReducerParams, VbgmmParams};
use crate::ehr::{Preset, TaskKind};
use crate::embed::OpenAiEmbedderConfig;
use crate::encoder::EncoderTrainConfig;
use crate::error::{Error, Result};
use crate::llm::{OpenAiLlmConfig, SamplingConfig};
use crate::math::sha256_hex;
use crate::prompt::PromptConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default = "default_tasks")]
    pub tasks: Vec<TaskKind>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub cohort: CohortConfig,
    #[serde(default)]
    pub prompt: PromptSection,
    #[serde(default)]
    pub llm: LlmConfig,
    #[serde(default)]
    pub embed: EmbedConfig,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub fusion: FusionSection,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_tasks() -> Vec<TaskKind> {
    TaskKind::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synth {
        #[serde(default = "default_preset")]
        preset: Preset,
        #[serde(default = "default_n")]
        n_patients: usize,
        #[serde(default = "default_groups")]
        n_cohorts: usize,
    },
    Path {
        path: PathBuf,
    },
}

fn default_preset() -> Preset {
    Preset::Mimic3
}
fn default_n() -> usize {
    2000
}
fn default_groups() -> usize {
    4
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synth { preset: Preset::Mimic3, n_patients: 2000, n_cohorts: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub k_neighbors: usize,
    pub d_r: usize,
    pub n_epochs: usize,
    pub max_components: usize,
    pub prune_eps: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub theta: f64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        let r = ReducerParams::default();
        let v = VbgmmParams::default();
        Self {
            k_neighbors: r.k_neighbors,
            d_r: r.d_r,
            n_epochs: r.n_epochs,
            max_components: v.max_components,
            prune_eps: v.prune_eps,
            max_iter: v.max_iter,
            tol: v.tol,
            theta: 0.05,
        }
    }
}

impl CohortConfig {
    pub fn reducer(&self, seed: u64) -> ReducerParams {
        ReducerParams { k_neighbors: self.k_neighbors, d_r: self.d_r, n_epochs: self.n_epochs, seed, ..Default::default() }
    }

    pub fn mixture(&self, seed: u64) -> VbgmmParams {
        VbgmmParams {
            max_components: self.max_components,
            prune_eps: self.prune_eps,
            max_iter: self.max_iter,
            tol: self.tol,
            seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PromptSection {
    #[serde(flatten)]
    pub budget: PromptConfig,
    /// Replacement template file.
    pub template: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Openai,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub backend: BackendKind,
    pub k: usize,
    pub temperature: f64,
    pub max_tokens: usize,
    pub informativeness: f64,
    pub openai: OpenAiLlmConfig,
}

impl Default for LlmConfig {
    fn default() -> Self {
        let s = SamplingConfig::default();
        Self {
            backend: BackendKind::Mock,
            k: s.k,
            temperature: s.temperature,
            max_tokens: s.max_tokens,
            informativeness: 1.0,
            openai: OpenAiLlmConfig::default(),
        }
    }
}

impl LlmConfig {
    pub fn sampling(&self, seed: u64) -> SamplingConfig {
        SamplingConfig { k: self.k, temperature: self.temperature, max_tokens: self.max_tokens, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub backend: BackendKind,
    pub dim: usize,
    pub openai: OpenAiEmbedderConfig,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self { backend: BackendKind::Mock, dim: 64, openai: OpenAiEmbedderConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let d = EncoderTrainConfig::default();
        Self { lr: d.lr, epochs: d.epochs, batch: d.batch }
    }
}

impl EncoderSection {
    pub fn train_config(&self, seed: u64) -> EncoderTrainConfig {
        EncoderTrainConfig { lr: self.lr, epochs: self.epochs, batch: self.batch, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub d_f: usize,
}

impl Default for FusionSection {
    fn default() -> Self {
        let d = crate::fusion::TrainConfig::new(TaskKind::Mortality);
        Self { lr: d.lr, epochs: d.epochs, batch: d.batch, d_f: d.d_f }
    }
}

impl FusionSection {
    pub fn train_config(&self, task: TaskKind, k: Option<usize>, seed: u64) -> crate::fusion::TrainConfig {
        crate::fusion::TrainConfig { lr: self.lr, epochs: self.epochs, batch: self.batch, seed, task, k, d_f: self.d_f }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub k_values: Vec<usize>,
    pub task: TaskKind,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { k_values: vec![0, 1, 2, 4, 8], task: TaskKind::Mortality }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))
    }

    /// Reads the file, resolves relative paths against its directory and
    /// applies environment overrides.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.out_dir);
        if let DataConfig::Path { path } = &mut cfg.data {
            resolve(path);
        }
        if let Some(t) = &mut cfg.prompt.template {
            resolve(t);
        }
        cfg.apply_env();
        Ok(cfg)
    }

    pub fn apply_env(&mut self) {
        self.llm.openai = self.llm.openai.clone().with_env();
        self.embed.openai = self.embed.openai.clone().with_env();
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::config("no tasks selected"));
        }
        if self.llm.k == 0 {
            return Err(Error::config("llm.k must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.llm.informativeness) {
            return Err(Error::config("llm.informativeness must lie in [0, 1]"));
        }
        if let Some(&k) = self.sweep.k_values.iter().find(|&&k| k > self.llm.k) {
            return Err(Error::config(format!("sweep K = {k} exceeds llm.k = {}", self.llm.k)));
        }
        if !(0.0..1.0).contains(&self.cohort.theta) {
            return Err(Error::config("cohort.theta must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Hash of a serializable config subtree.
pub fn hash_section<T: Serialize>(value: &T) -> String {
    sha256_hex(serde_json::to_string(value).expect("serializable").as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let cfg = PipelineConfig::from_toml("").unwrap();
        assert_eq!(cfg.llm.k, 8);
        assert_eq!(cfg.cohort.theta, 0.05);
        assert_eq!(cfg.prompt.budget.context_budget, 8192);
        assert_eq!(cfg.fusion.lr, 1e-4);
        assert_eq!(cfg.encoder.lr, 1e-3);
        let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn sections_parse() {
        let cfg = PipelineConfig::from_toml(
            r#"
seed = 3
tasks = ["mortality"]
[data]
source = "path"
path = "x.jsonl"
[llm]
backend = "openai"
k = 4
[llm.openai]
model = "m"
mode = "chat"
[prompt]
context_budget = 4096
"#,
        )
        .unwrap();
        assert_eq!(cfg.tasks, vec![TaskKind::Mortality]);
        assert!(matches!(cfg.data, DataConfig::Path { .. }));
        assert_eq!(cfg.llm.openai.mode, crate::llm::ApiMode::Chat);
        assert_eq!(cfg.prompt.budget.context_budget, 4096);
        assert!(PipelineConfig::from_toml("bogus = 1").is_err());
    }
}
