use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use esci_core::data::{synth_generate, PairKey, SynthConfig};
use esci_core::features::{assemble_features, class_targets, t1_product_set, FeatureConfig};
use esci_core::gbdt::{self, GbdtParams, Objective};
use esci_core::sched::{presort_batches, run_inference, BatchItem, SurrogateScorer};
use esci_core::Exec;

const MODES: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];

fn bench_features_and_training(c: &mut Criterion) {
    let data = synth_generate(
        &SynthConfig {
            queries: 300,
            ..SynthConfig::default()
        },
        7,
    )
    .unwrap();
    let ex = &data.t2t3;
    let t1 = t1_product_set(&data.t1);
    let targets: Vec<usize> = class_targets(ex)
        .unwrap()
        .iter()
        .map(|l| l.index())
        .collect();

    let mut group = c.benchmark_group("assemble_features");
    for (name, exec) in MODES {
        let cfg = FeatureConfig {
            exec,
            ..FeatureConfig::for_models(vec![0, 1, 2])
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                assemble_features(black_box(ex), &data.catalog, &data.probs, &t1, &cfg).unwrap()
            })
        });
    }
    group.finish();

    let matrix = assemble_features(
        ex,
        &data.catalog,
        &data.probs,
        &t1,
        &FeatureConfig::for_models(vec![0]),
    )
    .unwrap();
    let mut group = c.benchmark_group("gbdt_train");
    group.sample_size(10);
    for (name, exec) in MODES {
        let params = GbdtParams {
            num_rounds: 20,
            exec,
            ..GbdtParams::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                gbdt::train(black_box(&matrix), &targets, Objective::Multiclass, &params).unwrap()
            })
        });
    }
    group.finish();
}

fn bench_inference(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let seqs: Vec<Vec<u32>> = (0..4000)
        .map(|_| {
            let n = rng.random_range(4..=256);
            (0..n).map(|_| rng.random_range(2..50_000)).collect()
        })
        .collect();
    let items: Vec<BatchItem> = seqs
        .iter()
        .enumerate()
        .map(|(i, s)| BatchItem {
            key: PairKey::new("q", format!("p{i:05}")),
            length: s.len(),
        })
        .collect();
    let plan = presort_batches(&items, 32, None).unwrap();

    let mut group = c.benchmark_group("run_inference");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_inference(black_box(&plan), &seqs, &SurrogateScorer, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_features_and_training, bench_inference);
criterion_main!(benches);
