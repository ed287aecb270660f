use std::path::Path;

use serde::{Deserialize, Serialize};

use super::reducer::FittedReducer;
use super::stats::CohortStats;
use super::vbgmm::{CohortModel, VbgmmParams};
use crate::artifact;
use crate::error::Result;

pub const COHORT_MAGIC: &str = "COHORTv1";

/// Everything needed to place a new patient and read off memberships.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortArtifact {
    pub reducer: FittedReducer,
    pub mixture_params: VbgmmParams,
    pub model: CohortModel,
    pub stats: Vec<CohortStats>,
}

impl CohortArtifact {
    pub fn save(&self, path: &Path) -> Result<()> {
        artifact::save_tagged(path, COHORT_MAGIC, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        artifact::load_tagged(path, COHORT_MAGIC)
    }
}

/// Tab-separated table, one row per effective cohort.
pub fn write_stats_table(path: &Path, stats: &[CohortStats], effective_mask: &[bool]) -> Result<()> {
    let mut out = String::from(
        "cohort_id\tmembership_mass\tavg_age\tpct_male\tavg_n_conditions\tavg_n_procedures\tavg_n_medications\tavg_los\treadmission_rate\tmortality_rate\n",
    );
    for s in stats.iter().filter(|s| effective_mask.get(s.cohort_id).copied().unwrap_or(false)) {
        out.push_str(&format!(
            "{}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\n",
            s.cohort_id,
            s.membership_mass,
            s.avg_age,
            s.pct_male,
            s.avg_n_conditions,
            s.avg_n_procedures,
            s.avg_n_medications,
            s.avg_los,
            s.readmission_rate,
            s.mortality_rate
        ));
    }
    artifact::write_atomic(path, out.as_bytes())
}
