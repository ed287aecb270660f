//! Three-part analysis prompt: patient record, cohort statistics, trigger.

mod template;
mod tokens;

pub use template::{Template, SECTIONS};
pub use tokens::{estimate_tokens, CharsPerToken, TokenCounter};

use serde::{Deserialize, Serialize};

use crate::cohort::CohortStats;
use crate::ehr::{CodedConcept, Gender, PatientRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    None,
    MedicationsDropped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub patient_id: String,
    pub text: String,
    pub included_cohorts: Vec<usize>,
    pub truncation_applied: Truncation,
    pub est_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub context_budget: usize,
    pub max_generation_len: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self { context_budget: 8192, max_generation_len: 1024 }
    }
}

impl PromptConfig {
    /// Tokens available to the prompt itself.
    pub fn prompt_budget(&self) -> usize {
        self.context_budget.saturating_sub(self.max_generation_len)
    }
}

/// Renders with the bundled template and the chars/4 estimate.
pub fn build_prompt(
    record: &PatientRecord,
    selected: &[(CohortStats, f64)],
    config: &PromptConfig,
) -> Result<PromptBundle> {
    build_prompt_with(record, selected, config, &Template::default(), &CharsPerToken)
}

pub fn build_prompt_with(
    record: &PatientRecord,
    selected: &[(CohortStats, f64)],
    config: &PromptConfig,
    template: &Template,
    tokens: &dyn TokenCounter,
) -> Result<PromptBundle> {
    if selected.windows(2).any(|w| w[0].1 < w[1].1) {
        return Err(Error::domain("selected cohorts must be ordered by descending probability"));
    }
    let budget = config.prompt_budget();
    let mut truncation = Truncation::None;
    let mut text = render(record, selected, template, true);
    let mut est = tokens.count(&text);
    if est > budget {
        truncation = Truncation::MedicationsDropped;
        text = render(record, selected, template, false);
        est = tokens.count(&text);
        if est > budget {
            return Err(Error::PromptOverflow {
                patient_id: record.patient_id.clone(),
                est_tokens: est,
                budget,
            });
        }
    }
    Ok(PromptBundle {
        patient_id: record.patient_id.clone(),
        text,
        included_cohorts: selected.iter().map(|(s, _)| s.cohort_id).collect(),
        truncation_applied: truncation,
        est_tokens: est,
    })
}

fn subject(g: Gender) -> &'static str {
    match g {
        Gender::Male => "male patient",
        Gender::Female => "female patient",
        Gender::Other => "patient",
    }
}

fn items(concepts: &[CodedConcept]) -> String {
    concepts
        .iter()
        .map(|c| format!("- {}", c.description))
        .collect::<Vec<_>>()
        .join("\n")
}

fn code_section(template: &Template, name: &str, concepts: &[CodedConcept]) -> String {
    let count = concepts.len().to_string();
    let list = items(concepts);
    let body = template.fill(name, &[("count", &count), ("items", &list)]);
    // An empty list leaves a dangling newline after the header.
    body.trim_end().to_string()
}

fn percent(x: f64) -> String {
    format!("{}", x.round() as i64)
}

fn render(record: &PatientRecord, selected: &[(CohortStats, f64)], template: &Template, with_meds: bool) -> String {
    let mut parts = Vec::new();
    let age = record.age.to_string();
    parts.push(template.fill("patient", &[("age", &age), ("subject", subject(record.gender))]));
    parts.push(code_section(template, "conditions", &record.conditions));
    parts.push(code_section(template, "procedures", &record.procedures));
    if with_meds {
        parts.push(code_section(template, "medications", &record.medications));
    }
    if !selected.is_empty() {
        parts.push(template.fill("cohort_preamble", &[]));
        for (rank, (s, p)) in selected.iter().enumerate() {
            let fields = [
                ("rank", (rank + 1).to_string()),
                ("prob", percent(100.0 * p)),
                ("age", percent(s.avg_age)),
                ("male", percent(s.pct_male)),
                ("conditions", percent(s.avg_n_conditions)),
                ("procedures", percent(s.avg_n_procedures)),
                ("medications", percent(s.avg_n_medications)),
                ("los", format!("{:.1}", s.avg_los)),
                ("readmission", percent(s.readmission_rate)),
                ("mortality", percent(s.mortality_rate)),
            ];
            let refs: Vec<(&str, &str)> = fields.iter().map(|(k, v)| (*k, v.as_str())).collect();
            parts.push(template.fill("cohort", &refs));
        }
    }
    parts.push(template.fill("trigger", &[]));
    let mut text = parts.join("\n\n");
    text.push('\n');
    text
}
