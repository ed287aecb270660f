use cohort_fusion::cohort::CohortStats;
use cohort_fusion::ehr::{CodedConcept, Gender, PatientRecord, TaskLabels};

fn concepts(prefix: &str, names: &[String]) -> Vec<CodedConcept> {
    names.iter().enumerate().map(|(i, n)| CodedConcept::new(format!("{prefix}{i}"), n.clone())).collect()
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

pub fn case_patient() -> PatientRecord {
    let conditions = strings(&[
        "Acute vascular insufficiency of intestine",
        "Anoxic brain damage",
        "Congestive heart failure",
        "Pneumonia",
        "Chronic respiratory failure",
        "Other suppurative peritonitis",
        "Gastrointestinal hemorrhage",
        "Acute kidney failure",
        "Septicemia",
    ]);
    let procedures = strings(&[
        "Open and other right hemicolectomy",
        "Continuous invasive mechanical ventilation for less than 96 consecutive hours",
        "Insertion of endotracheal tube",
        "Venous catheterization",
        "Enteral infusion of concentrated nutritional substances",
        "Transfusion of packed cells",
        "Arterial catheterization",
    ]);
    let mut medications = strings(&["Famotidine (IV)", "Chlorpromazine HCl"]);
    medications.extend((3..=47).map(|i| format!("Medication {i}")));
    PatientRecord::new(
        "case-44",
        44,
        Gender::Male,
        concepts("D", &conditions),
        concepts("P", &procedures),
        concepts("M", &medications),
        TaskLabels::new(0, 1, 15.0).unwrap(),
    )
    .unwrap()
    .0
}

fn cohort(id: usize, v: [f64; 8]) -> CohortStats {
    CohortStats {
        cohort_id: id,
        membership_mass: 100.0,
        avg_age: v[0],
        pct_male: v[1],
        avg_n_conditions: v[2],
        avg_n_procedures: v[3],
        avg_n_medications: v[4],
        avg_los: v[5],
        readmission_rate: v[6],
        mortality_rate: v[7],
    }
}

pub fn case_cohorts() -> Vec<(CohortStats, f64)> {
    vec![
        (cohort(7, [67.0, 67.0, 12.0, 5.0, 35.0, 12.0, 57.0, 16.0]), 0.71),
        (cohort(2, [80.0, 55.0, 16.0, 9.0, 54.0, 24.0, 24.0, 21.0]), 0.17),
        (cohort(5, [64.0, 54.0, 17.0, 13.0, 67.0, 40.0, 31.0, 18.0]), 0.11),
    ]
}
