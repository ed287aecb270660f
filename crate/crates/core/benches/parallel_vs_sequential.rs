use std::hint::black_box;

use cohort_fusion::cohort::{knn_graph, CodeSet, CohortModel, ReducedEmbedding, VbgmmParams};
use cohort_fusion::ehr::{TaskKind, Vocab};
use cohort_fusion::encoder::{EncoderParams, FrozenEncoder};
use cohort_fusion::fusion::{predict_probabilities, random_instance, train_fusion, SplitExamples, TrainConfig};
use cohort_fusion::par::Execution;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn code_sets(n: usize, rng: &mut ChaCha8Rng) -> Vec<CodeSet> {
    (0..n)
        .map(|_| {
            let mut ids: Vec<u32> = (0..rng.random_range(20..60)).map(|_| rng.random_range(0..500)).collect();
            ids.sort_unstable();
            ids.dedup();
            CodeSet { ids, unshared: 0 }
        })
        .collect()
}

fn bench_knn(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sets = code_sets(800, &mut rng);
    let mut g = c.benchmark_group("knn_graph");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| b.iter(|| knn_graph(black_box(&sets), 15, e)));
    }
    g.finish();
}

fn bench_responsibilities(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let points: Vec<ReducedEmbedding> = (0..2000)
        .map(|i| {
            let centre = (i % 4) as f64 * 4.0;
            ReducedEmbedding {
                patient_id: format!("p{i}"),
                coords: (0..10).map(|_| centre + rng.sample::<f64, _>(StandardNormal)).collect(),
            }
        })
        .collect();
    let model = CohortModel::fit(&points[..600], VbgmmParams { max_components: 10, ..Default::default() }, Execution::Parallel)
        .expect("fit");
    let mut g = c.benchmark_group("responsibilities_all");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| model.responsibilities_all(black_box(&points), e).unwrap())
        });
    }
    g.finish();
}

fn bench_fusion(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let task = TaskKind::Mortality;
    let (params, data) = random_instance(&mut rng, 128, 64, 128, 8, 1024, task);
    let mut g = c.benchmark_group("fusion_predict");
    g.sample_size(20);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| predict_probabilities(&params, black_box(&data), task, e).unwrap())
        });
    }
    g.finish();

    let vocab = Vocab::from(vec!["a".to_string()]);
    let enc_params = EncoderParams::init(vocab.len(), task, &mut rng);
    let encoder = FrozenEncoder::new(enc_params, vocab, task).unwrap();
    let split = SplitExamples { train: data[..768].to_vec(), val: data[768..896].to_vec(), test: data[896..].to_vec() };
    let cfg = TrainConfig { epochs: 1, ..TrainConfig::new(task) };
    let mut g = c.benchmark_group("fusion_train_epoch");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| train_fusion(&encoder, black_box(&split), &cfg, e).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_knn, bench_responsibilities, bench_fusion);
criterion_main!(benches);
