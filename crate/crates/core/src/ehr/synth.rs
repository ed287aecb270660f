//! Planted-cohort synthetic records.
//!
//! Each patient draws a cohort, then codes from that cohort's per-code
//! Bernoulli profile, then demographics and labels. Labels also depend on
//! per-task standard-normal latents that no code reflects; the per-cohort
//! label offsets are calibrated so the realised base rates still match the
//! profile. The latents are returned in [`PlantedTruth`] so the mock LLM can
//! "know" something the record encoder cannot see.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::record::MAX_AGE;
use super::{CodedConcept, Gender, PatientRecord, TaskLabels};
use crate::error::{Error, Result};
use crate::math::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodeTypeSizes {
    pub conditions: usize,
    pub procedures: usize,
    pub medications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortProfile {
    pub weight: f64,
    pub condition_probs: Vec<f64>,
    pub procedure_probs: Vec<f64>,
    pub medication_probs: Vec<f64>,
    pub age_mean: f64,
    pub age_sd: f64,
    pub male_prob: f64,
    #[serde(default)]
    pub other_prob: f64,
    pub mortality_rate: f64,
    pub readmission_rate: f64,
    pub mean_los_days: f64,
}

/// Scale of the hidden per-task latent on the label's logit (binary tasks) or
/// log-LOS scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentStrengths {
    pub mortality: f64,
    pub readmission: f64,
    pub los: f64,
}

impl Default for LatentStrengths {
    fn default() -> Self {
        LatentStrengths {
            mortality: 2.0,
            readmission: 1.5,
            los: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_patients: usize,
    pub vocab_sizes: CodeTypeSizes,
    pub cohorts: Vec<CohortProfile>,
    #[serde(default)]
    pub latent: LatentStrengths,
}

/// Hidden generator state for one patient. Never an input to training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentDraw {
    pub mortality: f64,
    pub readmission: f64,
    pub los: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub patient_id: String,
    pub cohort: usize,
    pub latent: LatentDraw,
}

/// Presets matching the marginals of the two public ICU datasets the method
/// was evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Mimic3,
    Mimic4,
}

struct Marginals {
    conditions: f64,
    procedures: f64,
    medications: f64,
    mortality: f64,
    readmission: f64,
    mean_los: f64,
}

impl Preset {
    fn marginals(self) -> Marginals {
        match self {
            Preset::Mimic3 => Marginals {
                conditions: 13.4,
                procedures: 4.7,
                medications: 44.8,
                mortality: 0.121,
                readmission: 0.279,
                mean_los: 11.6,
            },
            Preset::Mimic4 => Marginals {
                conditions: 14.0,
                procedures: 2.5,
                medications: 28.8,
                mortality: 0.023,
                readmission: 0.376,
                mean_los: 5.1,
            },
        }
    }
}

impl SynthSpec {
    /// `n_cohorts` equally weighted cohorts, each with a disjoint signature
    /// block of codes per type over a sparse shared background, tuned so the
    /// expected per-visit code counts and label rates match the preset.
    pub fn from_preset(preset: Preset, n_patients: usize, n_cohorts: usize) -> Self {
        let m = preset.marginals();
        let sizes = CodeTypeSizes {
            conditions: 150,
            procedures: 80,
            medications: 300,
        };
        let g = n_cohorts.max(1);
        let profile = |vocab: usize, target: f64, background: f64, cohort: usize| {
            let block = vocab / (g + 1);
            let p_sig = ((target - (vocab - block) as f64 * background) / block as f64).clamp(0.0, 0.95);
            (0..vocab)
                .map(|j| {
                    if j / block == cohort && j < block * g {
                        p_sig
                    } else {
                        background
                    }
                })
                .collect::<Vec<_>>()
        };
        let spread = |lo: f64, hi: f64, i: usize| {
            if g == 1 {
                (lo + hi) / 2.0
            } else {
                lo + (hi - lo) * i as f64 / (g - 1) as f64
            }
        };
        let cohorts = (0..g)
            .map(|i| CohortProfile {
                weight: 1.0 / g as f64,
                condition_probs: profile(sizes.conditions, m.conditions, 0.02, i),
                procedure_probs: profile(sizes.procedures, m.procedures, 0.01, i),
                medication_probs: profile(sizes.medications, m.medications, 0.05, i),
                age_mean: spread(50.0, 75.0, i),
                age_sd: 12.0,
                male_prob: spread(0.45, 0.65, i),
                other_prob: 0.0,
                mortality_rate: m.mortality * spread(0.5, 1.5, i),
                readmission_rate: m.readmission * spread(1.4, 0.6, i),
                mean_los_days: m.mean_los * spread(0.6, 1.4, i),
            })
            .collect();
        SynthSpec {
            n_patients,
            vocab_sizes: sizes,
            cohorts,
            latent: LatentStrengths::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cohorts.is_empty() {
            return Err(Error::config("synthetic spec needs at least one cohort"));
        }
        for (i, c) in self.cohorts.iter().enumerate() {
            let check_len = |name: &str, v: &[f64], want: usize| {
                if v.len() != want {
                    Err(Error::config(format!(
                        "cohort {i}: {name} has {} entries, vocab size is {want}",
                        v.len()
                    )))
                } else if v.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    Err(Error::config(format!("cohort {i}: {name} outside [0, 1]")))
                } else {
                    Ok(())
                }
            };
            check_len("condition_probs", &c.condition_probs, self.vocab_sizes.conditions)?;
            check_len("procedure_probs", &c.procedure_probs, self.vocab_sizes.procedures)?;
            check_len("medication_probs", &c.medication_probs, self.vocab_sizes.medications)?;
            let rate_ok = |r: f64| r > 0.0 && r < 1.0;
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::config(format!("cohort {i}: weight must be positive")));
            }
            if !rate_ok(c.mortality_rate) || !rate_ok(c.readmission_rate) {
                return Err(Error::config(format!("cohort {i}: label rates must lie in (0, 1)")));
            }
            if !(c.mean_los_days > 0.0) || !(c.age_sd >= 0.0) {
                return Err(Error::config(format!("cohort {i}: LOS mean and age sd must be positive")));
            }
            if !(0.0..=1.0).contains(&(c.male_prob + c.other_prob)) || c.male_prob < 0.0 || c.other_prob < 0.0 {
                return Err(Error::config(format!("cohort {i}: gender probabilities invalid")));
            }
        }
        let l = self.latent;
        if [l.mortality, l.readmission, l.los].iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::config("latent strengths must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Gaussian expectation `E[sigmoid(offset + strength·Z)]`, `Z ~ N(0,1)`, by
/// trapezoidal quadrature on ±10σ.
fn expected_rate(offset: f64, strength: f64) -> f64 {
    const STEPS: usize = 2000;
    let h = 20.0 / STEPS as f64;
    let mut acc = 0.0;
    for i in 0..=STEPS {
        let z = -10.0 + i as f64 * h;
        let w = if i == 0 || i == STEPS { 0.5 } else { 1.0 };
        acc += w * (-0.5 * z * z).exp() * sigmoid(offset + strength * z);
    }
    acc * h / (2.0 * std::f64::consts::PI).sqrt()
}

/// Logit offset that makes the latent-perturbed rate average to `rate`.
pub fn calibrated_offset(rate: f64, strength: f64) -> f64 {
    let logit = (rate / (1.0 - rate)).ln();
    if strength == 0.0 {
        return logit;
    }
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if expected_rate(mid, strength) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn generate_synthetic_dataset(
    spec: &SynthSpec,
    seed: u64,
) -> Result<(Vec<PatientRecord>, Vec<PlantedTruth>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cohort_dist = WeightedIndex::new(spec.cohorts.iter().map(|c| c.weight))
        .map_err(|e| Error::config(format!("cohort weights: {e}")))?;
    let offsets: Vec<(f64, f64)> = spec
        .cohorts
        .iter()
        .map(|c| {
            (
                calibrated_offset(c.mortality_rate, spec.latent.mortality),
                calibrated_offset(c.readmission_rate, spec.latent.readmission),
            )
        })
        .collect();
    let stay_noise = Gamma::new(2.0, 0.5).expect("valid gamma");
    let width = (spec.n_patients.max(1) as f64).log10().floor() as usize + 1;

    let mut records = Vec::with_capacity(spec.n_patients);
    let mut truths = Vec::with_capacity(spec.n_patients);
    for i in 0..spec.n_patients {
        let g = cohort_dist.sample(&mut rng);
        let c = &spec.cohorts[g];
        let draw = |rng: &mut ChaCha8Rng, probs: &[f64], prefix: char, kind: &str| {
            probs
                .iter()
                .enumerate()
                .filter_map(|(j, &p)| {
                    (rng.random::<f64>() < p).then(|| {
                        let code = format!("{prefix}{j:04}");
                        let description = format!("Synthetic {kind} {code}");
                        CodedConcept::new(code, description)
                    })
                })
                .collect::<Vec<_>>()
        };
        let conditions = draw(&mut rng, &c.condition_probs, 'D', "condition");
        let procedures = draw(&mut rng, &c.procedure_probs, 'P', "procedure");
        let medications = draw(&mut rng, &c.medication_probs, 'M', "medication");

        let age_dist = Normal::new(c.age_mean, c.age_sd).map_err(|e| Error::config(e.to_string()))?;
        let age = age_dist.sample(&mut rng).round().clamp(0.0, MAX_AGE as f64) as u32;
        let u: f64 = rng.random();
        let gender = if u < c.male_prob {
            Gender::Male
        } else if u < c.male_prob + c.other_prob {
            Gender::Other
        } else {
            Gender::Female
        };

        let latent = LatentDraw {
            mortality: rng.sample(StandardNormal),
            readmission: rng.sample(StandardNormal),
            los: rng.sample(StandardNormal),
        };
        let (mort_off, readm_off) = offsets[g];
        let mortality =
            u8::from(rng.random::<f64>() < sigmoid(mort_off + spec.latent.mortality * latent.mortality));
        let readmission = u8::from(
            rng.random::<f64>() < sigmoid(readm_off + spec.latent.readmission * latent.readmission),
        );
        let s = spec.latent.los;
        let los = c.mean_los_days * stay_noise.sample(&mut rng) * (s * latent.los - 0.5 * s * s).exp();

        let patient_id = format!("S{i:0width$}");
        let (record, _) = PatientRecord::new(
            patient_id.clone(),
            age,
            gender,
            conditions,
            procedures,
            medications,
            TaskLabels::new(mortality, readmission, los)?,
        )?;
        records.push(record);
        truths.push(PlantedTruth {
            patient_id,
            cohort: g,
            latent,
        });
    }
    Ok((records, truths))
}
