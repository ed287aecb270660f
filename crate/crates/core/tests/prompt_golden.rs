mod common;

use common::case_study::{case_cohorts, case_patient};
use cohort_fusion::ehr::CodedConcept;
use cohort_fusion::prompt::{build_prompt, estimate_tokens, PromptConfig, Truncation};

const FULL: &str = include_str!("fixtures/case_study_prompt.txt");
const NO_MEDS: &str = include_str!("fixtures/case_study_prompt_no_meds.txt");

#[test]
fn case_study_matches_golden_file() {
    let b = build_prompt(&case_patient(), &case_cohorts(), &PromptConfig::default()).unwrap();
    assert_eq!(b.text, FULL);
    assert!(b.text.starts_with("There is a 44-year-old male patient"));
    assert_eq!(b.included_cohorts, vec![7, 2, 5]);
    assert_eq!(b.truncation_applied, Truncation::None);
}

#[test]
fn sections_appear_in_template_order() {
    let b = build_prompt(&case_patient(), &case_cohorts(), &PromptConfig::default()).unwrap();
    let marks = [
        "There is a",
        "diagnosed with 9 conditions:",
        "undergone 7 procedures:",
        "used 47 medications:",
        "(for reference only)",
        "- Cohort 1 (71% probability)",
        "- Cohort 2 (17% probability)",
        "- Cohort 3 (11% probability)",
        "Based on the patient information provided above",
    ];
    let pos: Vec<usize> = marks.iter().map(|m| b.text.find(m).unwrap_or_else(|| panic!("{m}"))).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn tight_budget_drops_only_medications() {
    let full_tokens = estimate_tokens(FULL);
    let no_meds_tokens = estimate_tokens(NO_MEDS);
    let config = PromptConfig { context_budget: no_meds_tokens + 10, max_generation_len: 10 };
    assert!(full_tokens > config.prompt_budget());
    let b = build_prompt(&case_patient(), &case_cohorts(), &config).unwrap();
    assert_eq!(b.truncation_applied, Truncation::MedicationsDropped);
    assert_eq!(b.text, NO_MEDS);
    assert_eq!(b.est_tokens, no_meds_tokens);
}

#[test]
fn adding_medications_never_drops_other_sections() {
    let cohorts = case_cohorts();
    let mut r = case_patient();
    let base = build_prompt(&r, &cohorts, &PromptConfig::default()).unwrap();
    assert_eq!(base.truncation_applied, Truncation::None);
    for extra in [100usize, 1000, 4000] {
        r.medications = (0..extra).map(|i| CodedConcept::new(format!("X{i}"), format!("Extra drug {i}"))).collect();
        let b = build_prompt(&r, &cohorts, &PromptConfig::default()).unwrap();
        assert!(b.text.contains("diagnosed with 9 conditions:"));
        assert!(b.text.contains("undergone 7 procedures:"));
        assert!(b.text.contains("- Cohort 3 (11% probability)"));
        assert!(b.est_tokens <= PromptConfig::default().prompt_budget());
    }
}
