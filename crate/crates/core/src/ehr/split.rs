use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PatientRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

/// Seeded 80/10/10 split. Train and validation sizes are floored, test gets
/// the remainder. Depends only on the set of ids and the seed.
pub fn split_dataset(records: &[PatientRecord], seed: u64) -> Result<DatasetSplit> {
    let n = records.len();
    if n < 10 {
        return Err(Error::Size(format!("need at least 10 records to split, got {n}")));
    }
    let mut ids: Vec<String> = records.iter().map(|r| r.patient_id.clone()).collect();
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    Ok(DatasetSplit {
        train: ids,
        val,
        test,
        seed,
    })
}
