use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Completion, LlmBackend, SamplingConfig};
use crate::ehr::PlantedTruth;
use crate::error::Result;
use crate::math::{fnv1a, mix_seed};
use crate::prompt::PromptBundle;

/// Per-task wording, five levels from lowest to highest risk.
pub struct RiskPhrases {
    pub levels: [&'static str; 5],
    pub suffix: &'static str,
}

const MORTALITY: RiskPhrases = RiskPhrases {
    levels: ["stable", "guarded", "fragile", "critical", "grave"],
    suffix: "prognosis for the next admission",
};
const READMISSION: RiskPhrases = RiskPhrases {
    levels: ["unlikely", "possible", "probable", "frequent", "recurrent"],
    suffix: "return within 30 days",
};
const STAY: RiskPhrases = RiskPhrases {
    levels: ["brief", "short", "average", "prolonged", "extended"],
    suffix: "stay expected",
};

/// Level words per task: mortality, readmission, length of stay.
pub fn risk_keywords() -> [&'static [&'static str; 5]; 3] {
    [&MORTALITY.levels, &READMISSION.levels, &STAY.levels]
}

const EDGES: [f64; 4] = [-1.2, -0.4, 0.4, 1.2];
const LATENT_NOISE: f64 = 0.5;

fn level(x: f64) -> usize {
    EDGES.iter().filter(|&&e| x >= e).count()
}

/// Deterministic stand-in for a language model. With probability
/// `informativeness` a sample reads the patient's hidden risk factors (with
/// noise) and its planted group; otherwise the risk wording is random. Informed
/// samples get lower perplexity.
#[derive(Debug, Clone)]
pub struct MockLlm {
    truths: HashMap<String, PlantedTruth>,
    group_mortality_pct: Vec<f64>,
    pub informativeness: f64,
    pub seed: u64,
}

impl MockLlm {
    pub fn new(truths: &[PlantedTruth], group_mortality_pct: Vec<f64>, informativeness: f64, seed: u64) -> Self {
        Self {
            truths: truths.iter().map(|t| (t.patient_id.clone(), t.clone())).collect(),
            group_mortality_pct,
            informativeness: informativeness.clamp(0.0, 1.0),
            seed,
        }
    }

    /// The sentence an informed sample emits about the patient's group.
    pub fn group_statement(&self, group: usize) -> String {
        match self.group_mortality_pct.get(group) {
            Some(p) => format!(
                "Similar patients in planted group {group} have a {}% mortality rate at the next admission.",
                p.round() as i64
            ),
            None => format!("Similar patients belong to planted group {group}."),
        }
    }

    fn sample_text(&self, prompt: &PromptBundle, index: usize, k: usize, rng: &mut ChaCha8Rng) -> (String, bool) {
        let truth = self.truths.get(&prompt.patient_id);
        let informed = truth.is_some() && rng.random::<f64>() < self.informativeness;
        let facts = prompt.text.lines().next().unwrap_or("").trim();
        let mut parts = vec![format!("Perspective {} of {k}.", index + 1), format!("Summary: {facts}")];
        let phrase = |p: &RiskPhrases, lv: usize| format!("Risk view: {} {}.", p.levels[lv], p.suffix);
        match truth.filter(|_| informed) {
            Some(t) => {
                let mut noisy = |x: f64| level(x + LATENT_NOISE * rng.sample::<f64, _>(StandardNormal));
                let (m, r, s) = (noisy(t.latent.mortality), noisy(t.latent.readmission), noisy(t.latent.los));
                parts.push(phrase(&MORTALITY, m));
                parts.push(phrase(&READMISSION, r));
                parts.push(phrase(&STAY, s));
                parts.push(self.group_statement(t.cohort));
            }
            None => {
                for p in [&MORTALITY, &READMISSION, &STAY] {
                    let lv = rng.random_range(0..5);
                    parts.push(phrase(p, lv));
                }
            }
        }
        (parts.join(" "), informed)
    }
}

impl LlmBackend for MockLlm {
    fn backend_id(&self) -> String {
        format!("mock-llm(informativeness={})", self.informativeness)
    }

    fn max_in_flight(&self) -> usize {
        8
    }

    fn complete(&self, prompt: &PromptBundle, config: &SamplingConfig) -> Result<Vec<Completion>> {
        let prompt_hash = fnv1a(prompt.text.as_bytes());
        Ok((0..config.k)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[prompt_hash, i as u64, self.seed, config.seed]));
                let (text, informed) = self.sample_text(prompt, i, config.k, &mut rng);
                let base = if informed { 0.35 } else { 1.1 };
                let n = text.split_whitespace().count();
                let logprobs = (0..n).map(|_| -base * (0.5 + rng.random::<f64>())).collect();
                Completion { text, token_logprobs: Some(logprobs) }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::synth::LatentDraw;
    use crate::llm::sample_analyses;
    use crate::prompt::Truncation;

    fn bundle(id: &str) -> PromptBundle {
        PromptBundle {
            patient_id: id.into(),
            text: "There is a 50-year-old male patient who is admitted to the ICU.\n\nmore".into(),
            included_cohorts: vec![],
            truncation_applied: Truncation::None,
            est_tokens: 10,
        }
    }

    fn truth(id: &str, cohort: usize, m: f64) -> PlantedTruth {
        PlantedTruth {
            patient_id: id.into(),
            cohort,
            latent: LatentDraw { mortality: m, readmission: 0.0, los: 0.0 },
        }
    }

    #[test]
    fn k_distinct_reproducible_texts() {
        let mock = MockLlm::new(&[truth("a", 1, 0.0)], vec![10.0, 20.0], 0.5, 3);
        let cfg = SamplingConfig::default();
        let a = sample_analyses(&bundle("a"), &cfg, &mock).unwrap();
        let b = sample_analyses(&bundle("a"), &cfg, &mock).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
        let texts: std::collections::BTreeSet<&str> = a.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(texts.len(), 8);
    }

    #[test]
    fn fully_informative_contains_group_statement() {
        let mock = MockLlm::new(&[truth("a", 1, 2.5)], vec![10.0, 20.0], 1.0, 3);
        let s = sample_analyses(&bundle("a"), &SamplingConfig::default(), &mock).unwrap();
        let stmt = mock.group_statement(1);
        assert!(stmt.contains("planted group 1 have a 20% mortality"));
        for x in &s {
            assert!(x.text.contains(&stmt), "{}", x.text);
        }
        let grave = s.iter().filter(|x| x.text.contains("grave prognosis")).count();
        assert!(grave >= 6, "{grave}");
    }

    #[test]
    fn informed_samples_have_lower_perplexity() {
        let hi = MockLlm::new(&[truth("a", 0, 0.0)], vec![], 1.0, 1);
        let lo = MockLlm::new(&[truth("a", 0, 0.0)], vec![], 0.0, 1);
        let cfg = SamplingConfig::default();
        let mean = |m: &MockLlm| {
            let s = sample_analyses(&bundle("a"), &cfg, m).unwrap();
            s.iter().map(|x| x.perplexity).sum::<f64>() / s.len() as f64
        };
        assert!(mean(&hi) < mean(&lo));
    }

    #[test]
    fn unknown_patient_is_uninformed() {
        let mock = MockLlm::new(&[], vec![], 1.0, 1);
        let s = sample_analyses(&bundle("zz"), &SamplingConfig::default(), &mock).unwrap();
        assert!(s.iter().all(|x| !x.text.contains("planted group")));
    }
}
