//! On-disk stages. Every stage writes its files atomically, then a stamp
//! recording the stage config hash and the sha256 of each file. Downstream
//! stages check the stamps of their direct inputs before reading anything.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{hash_section, PipelineConfig};
use super::steps::{self, Dataset};
use crate::artifact::{load_tagged, save_tagged, write_atomic};
use crate::cohort::{write_stats_table, CohortArtifact};
use crate::ehr::{load_patients_jsonl, split_dataset, write_patients_jsonl, DatasetSplit, PlantedTruth, TaskKind};
use crate::embed::EmbeddingCache;
use crate::encoder::FrozenEncoder;
use crate::error::{Error, Result};
use crate::fusion::{evaluate, AnalysisBundle, FusionCheckpoint};
use crate::llm::{AnalysisCache, AnalysisSample};
use crate::math::sha256_hex;
use crate::metrics::{format_table, EvalReport};
use crate::par::Execution;
use crate::prompt::{PromptBundle, Template};

const STAMP_MAGIC: &str = "STAMPv1";
const DATA_MAGIC: &str = "DATAv1";
const PROMPTS_MAGIC: &str = "PROMPTSv1";
const ANALYSES_MAGIC: &str = "ANALYSESv1";
const BUNDLES_MAGIC: &str = "BUNDLESv1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Synth,
    Cluster,
    Prompt,
    Analyze,
    Embed,
    Pretrain,
    Train,
    Evaluate,
    Sweep,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Synth,
        Stage::Cluster,
        Stage::Prompt,
        Stage::Analyze,
        Stage::Embed,
        Stage::Pretrain,
        Stage::Train,
        Stage::Evaluate,
        Stage::Sweep,
    ];

    /// Stages run by `all`, in order.
    pub const MAIN: [Stage; 8] = [
        Stage::Synth,
        Stage::Cluster,
        Stage::Prompt,
        Stage::Analyze,
        Stage::Embed,
        Stage::Pretrain,
        Stage::Train,
        Stage::Evaluate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Cluster => "cluster",
            Stage::Prompt => "prompt",
            Stage::Analyze => "analyze",
            Stage::Embed => "embed",
            Stage::Pretrain => "pretrain",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Sweep => "sweep",
        }
    }

    pub fn inputs(self) -> &'static [Stage] {
        match self {
            Stage::Synth => &[],
            Stage::Cluster => &[Stage::Synth],
            Stage::Prompt => &[Stage::Synth, Stage::Cluster],
            Stage::Analyze => &[Stage::Synth, Stage::Prompt],
            Stage::Embed => &[Stage::Prompt, Stage::Analyze],
            Stage::Pretrain => &[Stage::Synth],
            Stage::Train => &[Stage::Embed, Stage::Pretrain],
            Stage::Evaluate => &[Stage::Train],
            Stage::Sweep => &[Stage::Embed, Stage::Pretrain],
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub force: bool,
    pub exec: Execution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub stage: Stage,
    /// `false` when the stage was already complete and nothing was written.
    pub ran: bool,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Stamp {
    stage: Stage,
    config_hash: String,
    /// Output files relative to the output directory, with their sha256.
    files: BTreeMap<String, String>,
    /// sha256 of each input stage's stamp when this stage ran.
    #[serde(default)]
    inputs: BTreeMap<Stage, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DataMeta {
    patients_sha256: String,
    split: DatasetSplit,
    truths: Vec<PlantedTruth>,
    group_mortality_pct: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct ManifestLine<'a> {
    stage: &'a str,
    config_hash: &'a str,
    wall_secs: f64,
}

/// Removes the lock file when dropped.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(DirLock(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn file_sha(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

fn h(parts: &[&str]) -> String {
    sha256_hex(parts.join("\n").as_bytes())
}

/// One pipeline output directory under a given config.
pub struct Pipeline {
    cfg: PipelineConfig,
    dir: PathBuf,
    opts: RunOptions,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, opts: RunOptions) -> Result<Self> {
        cfg.validate()?;
        let dir = cfg.out_dir.clone();
        Ok(Self { cfg, dir, opts })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn stamp_path(&self, stage: Stage) -> PathBuf {
        self.dir.join("stamps").join(format!("{stage}.stamp"))
    }

    fn template_hash(&self) -> Result<String> {
        match &self.cfg.prompt.template {
            Some(p) => file_sha(p).map_err(|_| Error::config(format!("template {} does not exist", p.display()))),
            None => Ok("builtin".into()),
        }
    }

    fn data_hash(&self) -> String {
        match &self.cfg.data {
            super::config::DataConfig::Path { path } => file_sha(path).unwrap_or_else(|_| "missing".into()),
            super::config::DataConfig::Synth { .. } => "generated".into(),
        }
    }

    /// Hash over the config subtree a stage reads, chained through its inputs.
    pub fn stage_hash(&self, stage: Stage) -> Result<String> {
        let c = &self.cfg;
        let seed = c.seed.to_string();
        Ok(match stage {
            Stage::Synth => h(&["synth", &seed, &hash_section(&c.data), &self.data_hash()]),
            Stage::Cluster => h(&["cluster", &self.stage_hash(Stage::Synth)?, &hash_section(&c.cohort)]),
            Stage::Prompt => h(&[
                "prompt",
                &self.stage_hash(Stage::Cluster)?,
                &hash_section(&c.prompt.budget),
                &self.template_hash()?,
            ]),
            Stage::Analyze => h(&["analyze", &self.stage_hash(Stage::Prompt)?, &hash_section(&c.llm)]),
            Stage::Embed => h(&["embed", &self.stage_hash(Stage::Analyze)?, &hash_section(&c.embed)]),
            Stage::Pretrain => h(&[
                "pretrain",
                &self.stage_hash(Stage::Synth)?,
                &hash_section(&c.encoder),
                &hash_section(&c.tasks),
            ]),
            Stage::Train => h(&[
                "train",
                &self.stage_hash(Stage::Embed)?,
                &self.stage_hash(Stage::Pretrain)?,
                &hash_section(&c.fusion),
            ]),
            Stage::Evaluate => h(&["evaluate", &self.stage_hash(Stage::Train)?]),
            Stage::Sweep => h(&[
                "sweep",
                &self.stage_hash(Stage::Embed)?,
                &self.stage_hash(Stage::Pretrain)?,
                &hash_section(&c.fusion),
                &hash_section(&c.sweep),
            ]),
        })
    }

    fn read_stamp(&self, stage: Stage) -> Option<Stamp> {
        load_tagged(&self.stamp_path(stage), STAMP_MAGIC).ok()
    }

    fn input_stamps(&self, stage: Stage) -> Result<BTreeMap<Stage, String>> {
        stage.inputs().iter().map(|&s| Ok((s, file_sha(&self.stamp_path(s))?))).collect()
    }

    fn stamp_is_current(&self, stamp: &Stamp, hash: &str, inputs: &BTreeMap<Stage, String>) -> bool {
        stamp.config_hash == hash
            && &stamp.inputs == inputs
            && stamp.files.iter().all(|(rel, sha)| file_sha(&self.path(rel)).is_ok_and(|s| &s == sha))
    }

    fn check_input(&self, stage: Stage) -> Result<()> {
        let stamp_path = self.stamp_path(stage);
        if !stamp_path.exists() {
            return Err(Error::Dependency { stage: stage.to_string(), artifact: stamp_path.display().to_string() });
        }
        let stamp: Stamp = load_tagged(&stamp_path, STAMP_MAGIC)?;
        let expected = self.stage_hash(stage)?;
        if stamp.config_hash != expected {
            return Err(Error::Stale {
                stage: stage.to_string(),
                msg: "artifact was produced under a different config; rerun it".into(),
            });
        }
        for (rel, sha) in &stamp.files {
            let p = self.path(rel);
            if !p.exists() {
                return Err(Error::Dependency { stage: stage.to_string(), artifact: p.display().to_string() });
            }
            if &file_sha(&p)? != sha {
                return Err(Error::Stale { stage: stage.to_string(), msg: format!("{rel} was modified") });
            }
        }
        Ok(())
    }

    /// Runs one stage. Holds the directory lock for the duration.
    pub fn run(&self, stage: Stage) -> Result<StageOutcome> {
        let _lock = DirLock::acquire(&self.dir)?;
        self.run_locked(stage)
    }

    /// Runs every stage of the main chain in order.
    pub fn run_all(&self) -> Result<Vec<StageOutcome>> {
        let _lock = DirLock::acquire(&self.dir)?;
        Stage::MAIN.iter().map(|&s| self.run_locked(s)).collect()
    }

    fn run_locked(&self, stage: Stage) -> Result<StageOutcome> {
        let hash = self.stage_hash(stage)?;
        for &input in stage.inputs() {
            self.check_input(input)?;
        }
        let inputs = self.input_stamps(stage)?;
        if !self.opts.force {
            if let Some(stamp) = self.read_stamp(stage) {
                if self.stamp_is_current(&stamp, &hash, &inputs) {
                    log::info!("stage {stage} is up to date");
                    return Ok(StageOutcome { stage, ran: false, config_hash: hash });
                }
            }
        }
        let start = Instant::now();
        log::info!("running stage {stage}");
        let files = match stage {
            Stage::Synth => self.synth()?,
            Stage::Cluster => self.cluster()?,
            Stage::Prompt => self.prompt()?,
            Stage::Analyze => self.analyze()?,
            Stage::Embed => self.embed()?,
            Stage::Pretrain => self.pretrain()?,
            Stage::Train => self.train()?,
            Stage::Evaluate => self.evaluate()?,
            Stage::Sweep => self.sweep()?,
        };
        let mut shas = BTreeMap::new();
        for rel in files {
            let sha = file_sha(&self.path(&rel))?;
            shas.insert(rel, sha);
        }
        let stamp = Stamp { stage, config_hash: hash.clone(), files: shas, inputs };
        save_tagged(&self.stamp_path(stage), STAMP_MAGIC, &stamp)?;
        let wall_secs = start.elapsed().as_secs_f64();
        let line = serde_json::to_string(&ManifestLine { stage: stage.as_str(), config_hash: &hash, wall_secs })?;
        let mut manifest = OpenOptions::new().create(true).append(true).open(self.path("manifest.jsonl"))?;
        writeln!(manifest, "{line}")?;
        log::info!("stage {stage} finished in {wall_secs:.1}s");
        Ok(StageOutcome { stage, ran: true, config_hash: hash })
    }

    fn synth(&self) -> Result<Vec<String>> {
        let data = steps::load_dataset(&self.cfg.data, self.cfg.seed)?;
        let split = split_dataset(&data.records, self.cfg.seed)?;
        let patients = "data/patients.jsonl".to_string();
        write_patients_jsonl(&self.path(&patients), &data.records)?;
        let meta = DataMeta {
            patients_sha256: file_sha(&self.path(&patients))?,
            split,
            truths: data.truths,
            group_mortality_pct: data.group_mortality_pct,
        };
        let meta_file = "data/dataset.art".to_string();
        save_tagged(&self.path(&meta_file), DATA_MAGIC, &meta)?;
        Ok(vec![patients, meta_file])
    }

    fn load_data(&self) -> Result<(Dataset, DatasetSplit)> {
        let meta: DataMeta = load_tagged(&self.path("data/dataset.art"), DATA_MAGIC)?;
        let patients = self.path("data/patients.jsonl");
        if file_sha(&patients)? != meta.patients_sha256 {
            return Err(Error::Stale { stage: "synth".into(), msg: "patients.jsonl does not match its metadata".into() });
        }
        let records = load_patients_jsonl(&patients)?.records;
        Ok((
            Dataset { records, truths: meta.truths, group_mortality_pct: meta.group_mortality_pct },
            meta.split,
        ))
    }

    fn cluster(&self) -> Result<Vec<String>> {
        let (data, split) = self.load_data()?;
        let train = steps::select(&data.records, &split.train)?;
        let cohorts = steps::fit_cohorts(&train, &self.cfg.cohort, self.cfg.seed, self.opts.exec)?;
        let art = "cohorts/cohorts.art".to_string();
        let table = "cohorts/stats.tsv".to_string();
        cohorts.save(&self.path(&art))?;
        write_stats_table(&self.path(&table), &cohorts.stats, &cohorts.model.effective_mask)?;
        Ok(vec![art, table])
    }

    fn template(&self) -> Result<Template> {
        match &self.cfg.prompt.template {
            Some(p) if !p.exists() => Err(Error::config(format!("template {} does not exist", p.display()))),
            Some(p) => Template::load(p),
            None => Ok(Template::default()),
        }
    }

    fn prompt(&self) -> Result<Vec<String>> {
        let (data, _) = self.load_data()?;
        let cohorts = CohortArtifact::load(&self.path("cohorts/cohorts.art"))?;
        let template = self.template()?;
        let prompts = steps::build_prompts(
            &cohorts,
            &data.records,
            self.cfg.cohort.theta,
            &self.cfg.prompt.budget,
            &template,
            self.opts.exec,
        )?;
        let dropped = prompts.iter().filter(|p| p.truncation_applied != crate::prompt::Truncation::None).count();
        if dropped > 0 {
            log::warn!("{dropped} prompts dropped their medication list to fit the budget");
        }
        let file = "prompts/prompts.art".to_string();
        save_tagged(&self.path(&file), PROMPTS_MAGIC, &prompts)?;
        Ok(vec![file])
    }

    fn load_prompts(&self) -> Result<Vec<PromptBundle>> {
        load_tagged(&self.path("prompts/prompts.art"), PROMPTS_MAGIC)
    }

    fn analyze(&self) -> Result<Vec<String>> {
        let (data, _) = self.load_data()?;
        let prompts = self.load_prompts()?;
        let backend = steps::llm_backend(&self.cfg.llm, &data, self.cfg.seed)?;
        let mut cache = AnalysisCache::open(&self.path("cache/analyses.jsonl"))?;
        let sampling = self.cfg.llm.sampling(self.cfg.seed);
        let analyses = steps::analyze(&prompts, &sampling, backend.as_ref(), Some(&mut cache))?;
        let file = "analyses/analyses.art".to_string();
        save_tagged(&self.path(&file), ANALYSES_MAGIC, &analyses)?;
        Ok(vec![file])
    }

    fn embed(&self) -> Result<Vec<String>> {
        let prompts = self.load_prompts()?;
        let analyses: Vec<Vec<AnalysisSample>> = load_tagged(&self.path("analyses/analyses.art"), ANALYSES_MAGIC)?;
        if analyses.len() != prompts.len() {
            return Err(Error::Stale { stage: "analyze".into(), msg: "analysis count differs from prompt count".into() });
        }
        let backend = steps::embed_backend(&self.cfg.embed, self.cfg.seed)?;
        let mut cache = EmbeddingCache::open(&self.path("cache/embeddings.jsonl"))?;
        let bundles = steps::embed_analyses(&prompts, &analyses, backend.as_ref(), Some(&mut cache))?;
        let file = "embeddings/bundles.art".to_string();
        save_tagged(&self.path(&file), BUNDLES_MAGIC, &bundles)?;
        Ok(vec![file])
    }

    fn load_bundles(&self) -> Result<HashMap<String, AnalysisBundle>> {
        let bundles: Vec<AnalysisBundle> = load_tagged(&self.path("embeddings/bundles.art"), BUNDLES_MAGIC)?;
        Ok(steps::bundle_map(bundles))
    }

    fn encoder_file(task: TaskKind) -> String {
        format!("encoders/{task}.enc")
    }

    fn pretrain(&self) -> Result<Vec<String>> {
        let (data, split) = self.load_data()?;
        let cfg = self.cfg.encoder.train_config(self.cfg.seed);
        let mut files = Vec::new();
        for &task in &self.cfg.tasks {
            let (encoder, report) = steps::pretrain(&data.records, &split, task, &cfg, self.opts.exec)?;
            log::info!("{task} encoder: best epoch {:?}", report.best_epoch);
            let file = Self::encoder_file(task);
            encoder.save(&self.path(&file))?;
            files.push(file);
        }
        Ok(files)
    }

    fn model_files(task: TaskKind, variant: &str) -> (String, String) {
        (format!("models/{task}-{variant}.fuse"), format!("models/{task}-{variant}.train.json"))
    }

    /// Trains fused (all sampled analyses) and encoder-only heads per task.
    fn train(&self) -> Result<Vec<String>> {
        let (data, split) = self.load_data()?;
        let bundles = self.load_bundles()?;
        let mut files = Vec::new();
        for &task in &self.cfg.tasks {
            let encoder = FrozenEncoder::load(&self.path(&Self::encoder_file(task)))?;
            for (variant, k) in [("fused", self.cfg.llm.k), ("encoder-only", 0)] {
                let cfg = self.cfg.fusion.train_config(task, Some(k), self.cfg.seed);
                let out = steps::train_and_evaluate(&encoder, &data.records, &split, &bundles, &cfg, self.opts.exec)?;
                let (ckpt_file, report_file) = Self::model_files(task, variant);
                FusionCheckpoint { params: out.params, config: cfg, encoder_checksum: encoder.checksum() }
                    .save(&self.path(&ckpt_file))?;
                write_atomic(&self.path(&report_file), out.report.to_json()?.as_bytes())?;
                files.push(ckpt_file);
                files.push(report_file);
            }
        }
        Ok(files)
    }

    fn evaluate(&self) -> Result<Vec<String>> {
        let (data, split) = self.load_data()?;
        let bundles = self.load_bundles()?;
        let mut files = Vec::new();
        let mut reports = Vec::new();
        for &task in &self.cfg.tasks {
            let encoder = FrozenEncoder::load(&self.path(&Self::encoder_file(task)))?;
            for variant in ["fused", "encoder-only"] {
                let (ckpt_file, report_file) = Self::model_files(task, variant);
                let ckpt = FusionCheckpoint::load(&self.path(&ckpt_file))?;
                if ckpt.encoder_checksum != encoder.checksum() {
                    return Err(Error::Stale { stage: "train".into(), msg: format!("{ckpt_file} was trained on another encoder") });
                }
                let mut report: EvalReport = serde_json::from_slice(&fs::read(self.path(&report_file))?)?;
                let test = steps::select(&data.records, &split.test)?;
                let examples =
                    crate::fusion::build_examples(&encoder, &test, &bundles, task, ckpt.config.k, self.opts.exec)?;
                report.metrics = evaluate(&ckpt.params, &examples, task, self.opts.exec)?;
                report.n_test = examples.len();
                let file = format!("reports/{task}-{variant}.json");
                write_atomic(&self.path(&file), report.to_json()?.as_bytes())?;
                files.push(file);
                reports.push(report);
            }
        }
        let table = "reports/table.txt".to_string();
        write_atomic(&self.path(&table), format_table(&reports).as_bytes())?;
        files.push(table);
        Ok(files)
    }

    fn sweep(&self) -> Result<Vec<String>> {
        let (data, split) = self.load_data()?;
        let bundles = self.load_bundles()?;
        let task = self.cfg.sweep.task;
        let enc_file = Self::encoder_file(task);
        if !self.path(&enc_file).exists() {
            return Err(Error::Dependency { stage: "pretrain".into(), artifact: self.path(&enc_file).display().to_string() });
        }
        let encoder = FrozenEncoder::load(&self.path(&enc_file))?;
        let mut files = Vec::new();
        let mut reports = Vec::new();
        for &k in &self.cfg.sweep.k_values {
            let cfg = self.cfg.fusion.train_config(task, Some(k), self.cfg.seed);
            let mut report =
                steps::train_and_evaluate(&encoder, &data.records, &split, &bundles, &cfg, self.opts.exec)?.report;
            report.variant = format!("K={k}");
            let file = format!("sweep/{task}-k{k}.json");
            write_atomic(&self.path(&file), report.to_json()?.as_bytes())?;
            files.push(file);
            reports.push(report);
        }
        let table = "sweep/table.txt".to_string();
        write_atomic(&self.path(&table), format_table(&reports).as_bytes())?;
        files.push(table);
        Ok(files)
    }
}

/// Every EvalReport under `dir/reports` and `dir/sweep`, sorted by file name.
pub fn collect_reports(dir: &Path) -> Result<Vec<EvalReport>> {
    let mut paths = Vec::new();
    for sub in ["reports", "sweep"] {
        let d = dir.join(sub);
        if !d.is_dir() {
            continue;
        }
        for entry in fs::read_dir(&d)? {
            let p = entry?.path();
            if p.extension().is_some_and(|e| e == "json") {
                paths.push(p);
            }
        }
    }
    if paths.is_empty() {
        return Err(Error::Dependency { stage: "evaluate".into(), artifact: dir.join("reports").display().to_string() });
    }
    paths.sort();
    paths
        .iter()
        .map(|p| {
            serde_json::from_slice(&fs::read(p)?)
                .map_err(|e| Error::Artifact { path: p.clone(), msg: e.to_string() })
        })
        .collect()
}

/// The combined table for `pipeline report`.
pub fn report_table(dir: &Path) -> Result<String> {
    Ok(format_table(&collect_reports(dir)?))
}
