//! Patient records, ingestion, label derivation, splitting, and the
//! planted-cohort synthetic generator.

mod los;
mod record;
mod split;
pub mod synth;
mod vocab;

pub use los::{assign_los_bin, N_LOS_BINS};
pub use record::{
    load_patients_jsonl, write_patients_jsonl, CodedConcept, Gender, LoadReport, PatientRecord,
    TaskKind, TaskLabels,
};
pub use split::{split_dataset, DatasetSplit};
pub use synth::{generate_synthetic_dataset, PlantedTruth, Preset, SynthSpec};
pub use vocab::{multi_hot_encode, MultiHot, Vocab};
