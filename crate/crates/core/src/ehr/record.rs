use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::los::assign_los_bin;
use crate::error::{Error, Result};

pub const MAX_AGE: u32 = 130;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
    Other,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodedConcept {
    pub code: String,
    pub description: String,
}

impl CodedConcept {
    pub fn new(code: impl Into<String>, description: impl Into<String>) -> Self {
        CodedConcept {
            code: code.into(),
            description: description.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLabels {
    pub mortality: u8,
    pub readmission: u8,
    pub length_of_stay_days: f64,
    pub los_bin: u8,
}

impl TaskLabels {
    pub fn new(mortality: u8, readmission: u8, length_of_stay_days: f64) -> Result<Self> {
        if mortality > 1 || readmission > 1 {
            return Err(Error::domain("binary labels must be 0 or 1"));
        }
        Ok(TaskLabels {
            mortality,
            readmission,
            length_of_stay_days,
            los_bin: assign_los_bin(length_of_stay_days)?,
        })
    }
}

/// One admission. Code lists behave as sets: no code repeats within a list,
/// first occurrence order is kept for rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub age: u32,
    pub gender: Gender,
    pub conditions: Vec<CodedConcept>,
    pub procedures: Vec<CodedConcept>,
    pub medications: Vec<CodedConcept>,
    pub labels: TaskLabels,
}

impl PatientRecord {
    /// Builds a record, deduplicating each code list. Returns the number of
    /// dropped duplicates alongside.
    pub fn new(
        patient_id: impl Into<String>,
        age: u32,
        gender: Gender,
        conditions: Vec<CodedConcept>,
        procedures: Vec<CodedConcept>,
        medications: Vec<CodedConcept>,
        labels: TaskLabels,
    ) -> Result<(Self, usize)> {
        let patient_id = patient_id.into();
        if patient_id.is_empty() {
            return Err(Error::data("patient_id must be non-empty"));
        }
        if age > MAX_AGE {
            return Err(Error::data(format!("age {age} exceeds {MAX_AGE}")));
        }
        let mut dups = 0;
        let mut dedup = |list: Vec<CodedConcept>| -> Result<Vec<CodedConcept>> {
            let mut seen = HashSet::new();
            let mut out = Vec::with_capacity(list.len());
            for c in list {
                if c.code.is_empty() {
                    return Err(Error::data("empty code"));
                }
                if c.description.trim().is_empty() {
                    return Err(Error::data(format!("code `{}` has no description", c.code)));
                }
                if seen.insert(c.code.clone()) {
                    out.push(c);
                } else {
                    dups += 1;
                }
            }
            Ok(out)
        };
        let conditions = dedup(conditions)?;
        let procedures = dedup(procedures)?;
        let medications = dedup(medications)?;
        Ok((
            PatientRecord {
                patient_id,
                age,
                gender,
                conditions,
                procedures,
                medications,
                labels,
            },
            dups,
        ))
    }

    pub fn all_codes(&self) -> impl Iterator<Item = &str> {
        self.conditions
            .iter()
            .chain(&self.procedures)
            .chain(&self.medications)
            .map(|c| c.code.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Mortality,
    Readmission,
    Los,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Mortality, TaskKind::Readmission, TaskKind::Los];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Mortality => "mortality",
            TaskKind::Readmission => "readmission",
            TaskKind::Los => "los",
        }
    }

    pub fn is_binary(self) -> bool {
        !matches!(self, TaskKind::Los)
    }

    /// Width of the prediction head.
    pub fn output_dim(self) -> usize {
        if self.is_binary() {
            1
        } else {
            super::N_LOS_BINS
        }
    }

    pub fn n_classes(self) -> usize {
        if self.is_binary() {
            2
        } else {
            super::N_LOS_BINS
        }
    }

    pub fn label(self, labels: &TaskLabels) -> usize {
        match self {
            TaskKind::Mortality => labels.mortality as usize,
            TaskKind::Readmission => labels.readmission as usize,
            TaskKind::Los => labels.los_bin as usize,
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mortality" => Ok(TaskKind::Mortality),
            "readmission" => Ok(TaskKind::Readmission),
            "los" | "length_of_stay" => Ok(TaskKind::Los),
            other => Err(Error::config(format!("unknown task `{other}`"))),
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelsLine {
    mortality: u8,
    readmission: u8,
    los_days: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    patient_id: String,
    age: u32,
    gender: Gender,
    #[serde(default)]
    conditions: Vec<CodedConcept>,
    #[serde(default)]
    procedures: Vec<CodedConcept>,
    #[serde(default)]
    medications: Vec<CodedConcept>,
    labels: LabelsLine,
}

#[derive(Debug, Clone)]
pub struct LoadReport {
    pub records: Vec<PatientRecord>,
    /// Codes dropped because they repeated within one list.
    pub duplicate_codes: usize,
}

pub fn load_patients_jsonl(path: &Path) -> Result<LoadReport> {
    let file = fs::File::open(path)?;
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    let mut duplicate_codes = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg,
        };
        let raw: RecordLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let labels = TaskLabels::new(
            raw.labels.mortality,
            raw.labels.readmission,
            raw.labels.los_days,
        )
        .map_err(|e| parse_err(e.to_string()))?;
        let (record, dups) = PatientRecord::new(
            raw.patient_id,
            raw.age,
            raw.gender,
            raw.conditions,
            raw.procedures,
            raw.medications,
            labels,
        )
        .map_err(|e| parse_err(e.to_string()))?;
        if !ids.insert(record.patient_id.clone()) {
            return Err(Error::DuplicatePatient(record.patient_id));
        }
        duplicate_codes += dups;
        records.push(record);
    }
    if duplicate_codes > 0 {
        log::warn!("{}: dropped {duplicate_codes} duplicate codes", path.display());
    }
    Ok(LoadReport {
        records,
        duplicate_codes,
    })
}

pub fn record_to_json_line(r: &PatientRecord) -> Result<String> {
    let line = RecordLine {
        patient_id: r.patient_id.clone(),
        age: r.age,
        gender: r.gender,
        conditions: r.conditions.clone(),
        procedures: r.procedures.clone(),
        medications: r.medications.clone(),
        labels: LabelsLine {
            mortality: r.labels.mortality,
            readmission: r.labels.readmission,
            los_days: r.labels.length_of_stay_days,
        },
    };
    Ok(serde_json::to_string(&line)?)
}

pub fn write_patients_jsonl(path: &Path, records: &[PatientRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        out.write_all(record_to_json_line(r)?.as_bytes())?;
        out.push(b'\n');
    }
    crate::artifact::write_atomic(path, &out)
}
