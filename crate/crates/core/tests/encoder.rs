use std::collections::HashMap;

use cohort_fusion::ehr::synth::LatentStrengths;
use cohort_fusion::ehr::{generate_synthetic_dataset, split_dataset, PatientRecord, Preset, SynthSpec, TaskKind, Vocab};
use cohort_fusion::encoder::{pretrain_encoder, EncoderTrainConfig};
use cohort_fusion::math::cosine;
use cohort_fusion::metrics::auroc;
use cohort_fusion::par::Execution;
use rand::{Rng, SeedableRng};

fn separable_spec(n: usize) -> SynthSpec {
    let mut spec = SynthSpec::from_preset(Preset::Mimic3, n, 2);
    spec.latent = LatentStrengths { mortality: 0.0, readmission: 0.0, los: 0.0 };
    spec.cohorts[0].mortality_rate = 0.02;
    spec.cohorts[1].mortality_rate = 0.8;
    spec
}

#[test]
fn separable_task_reaches_target_auroc_and_separates_cohorts() {
    let (records, truths) = generate_synthetic_dataset(&separable_spec(1000), 11).unwrap();
    let split = split_dataset(&records, 11).unwrap();
    let by_id: HashMap<&str, &PatientRecord> = records.iter().map(|r| (r.patient_id.as_str(), r)).collect();
    let pick = |ids: &[String]| ids.iter().map(|i| by_id[i.as_str()]).collect::<Vec<_>>();
    let (train, val) = (pick(&split.train), pick(&split.val));
    let vocab = Vocab::build(train.iter().copied());
    let (enc, report) =
        pretrain_encoder(&train, &val, vocab, TaskKind::Mortality, &EncoderTrainConfig::default(), Execution::Parallel).unwrap();
    let best = report.val_auroc[report.best_epoch.unwrap()];
    assert!(best >= 0.8, "validation AUROC {best}");

    let scores: Vec<f64> = val.iter().map(|r| enc.head_logits(r)[0]).collect();
    let labels: Vec<bool> = val.iter().map(|r| r.labels.mortality == 1).collect();
    assert!((auroc(&scores, &labels).unwrap() - best).abs() < 1e-12);

    let cohort: HashMap<&str, usize> = truths.iter().map(|t| (t.patient_id.as_str(), t.cohort)).collect();
    let hs: Vec<(usize, Vec<f64>)> = records.iter().map(|r| (cohort[r.patient_id.as_str()], enc.encode(r))).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let (mut same, mut diff) = (Vec::new(), Vec::new());
    while same.len() < 100 || diff.len() < 100 {
        let a = rng.random_range(0..hs.len());
        let b = rng.random_range(0..hs.len());
        if a == b {
            continue;
        }
        let c = cosine(&hs[a].1, &hs[b].1);
        if hs[a].0 == hs[b].0 {
            if same.len() < 100 {
                same.push(c);
            }
        } else if diff.len() < 100 {
            diff.push(c);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&same) >= mean(&diff) + 0.1, "same {} diff {}", mean(&same), mean(&diff));
}

#[test]
fn identical_records_identical_embeddings() {
    let (records, _) = generate_synthetic_dataset(&separable_spec(50), 1).unwrap();
    let refs: Vec<&PatientRecord> = records.iter().collect();
    let cfg = EncoderTrainConfig { epochs: 1, ..Default::default() };
    let (enc, _) = pretrain_encoder(&refs, &refs, Vocab::build(&records), TaskKind::Mortality, &cfg, Execution::Sequential).unwrap();
    let mut twin = records[0].clone();
    twin.patient_id = "twin".into();
    assert_eq!(enc.encode(&records[0]), enc.encode(&twin));
}
