//! Resumable on-disk stages driven by one config file, plus an in-memory
//! runner for quick synthetic experiments.

mod config;
mod experiment;
mod stages;
pub mod steps;

pub use config::{
    hash_section, BackendKind, CohortConfig, DataConfig, EmbedConfig, EncoderSection, FusionSection, LlmConfig,
    PipelineConfig, PromptSection, SweepConfig,
};
pub use experiment::{run_experiment, ExperimentConfig};
pub use stages::{collect_reports, report_table, Pipeline, RunOptions, Stage, StageOutcome};
