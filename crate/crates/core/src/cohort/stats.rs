use serde::{Deserialize, Serialize};

use crate::ehr::{Gender, PatientRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortStats {
    pub cohort_id: usize,
    pub membership_mass: f64,
    pub avg_age: f64,
    pub pct_male: f64,
    pub avg_n_conditions: f64,
    pub avg_n_procedures: f64,
    pub avg_n_medications: f64,
    pub avg_los: f64,
    pub readmission_rate: f64,
    pub mortality_rate: f64,
}

/// Responsibility-weighted means over training patients. Cohorts whose
/// expected membership is below one patient are left out.
pub fn cohort_statistics(records: &[PatientRecord], responsibilities: &[Vec<f64>]) -> Result<Vec<CohortStats>> {
    if records.is_empty() {
        return Err(Error::Size("cohort statistics need at least one training patient".into()));
    }
    if records.len() != responsibilities.len() {
        return Err(Error::data("one responsibility vector per record is required"));
    }
    let m = responsibilities[0].len();
    let mut out = Vec::new();
    for k in 0..m {
        let mut mass = 0.0;
        let mut acc = [0.0f64; 8];
        for (r, resp) in records.iter().zip(responsibilities) {
            let w = resp[k];
            if w == 0.0 {
                continue;
            }
            mass += w;
            let fields = [
                r.age as f64,
                if r.gender == Gender::Male { 100.0 } else { 0.0 },
                r.conditions.len() as f64,
                r.procedures.len() as f64,
                r.medications.len() as f64,
                r.labels.length_of_stay_days,
                100.0 * r.labels.readmission as f64,
                100.0 * r.labels.mortality as f64,
            ];
            for (a, f) in acc.iter_mut().zip(fields) {
                *a += w * f;
            }
        }
        if mass < 1.0 {
            continue;
        }
        let mean = |i: usize| acc[i] / mass;
        out.push(CohortStats {
            cohort_id: k,
            membership_mass: mass,
            avg_age: mean(0),
            pct_male: mean(1),
            avg_n_conditions: mean(2),
            avg_n_procedures: mean(3),
            avg_n_medications: mean(4),
            avg_los: mean(5),
            readmission_rate: mean(6),
            mortality_rate: mean(7),
        });
    }
    Ok(out)
}
