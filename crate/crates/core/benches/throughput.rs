use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use oe_workbench::density::{nll_batch_with, ArModel, DiscreteSequence};
use oe_workbench::harness::{presets, run_seeds_with};
use oe_workbench::nn::{forward_with, Activation, NetworkParams};
use oe_workbench::scoring::{score_dataset_with, DataRef, DetectorKind, ModelRef};
use oe_workbench::{Execution, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn classifier(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = NetworkParams::init(&[32, 128, 128, 10], Activation::Relu, false, &mut rng).unwrap();
    let x = Matrix::from_vec(4096, 32, (0..4096 * 32).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let mut g = c.benchmark_group("classifier");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new("forward", name), &exec, |b, &e| {
            b.iter(|| forward_with(black_box(&p), &x, e).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("score_msp", name), &exec, |b, &e| {
            b.iter(|| {
                score_dataset_with(ModelRef::Classifier(&p), DetectorKind::Msp, DataRef::Features(&x), e).unwrap()
            })
        });
    }
    g.finish();
}

fn density(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = ArModel::new(4, 16, &[64], Activation::Relu, &mut rng).unwrap();
    let xs: Vec<_> = (0..1024)
        .map(|_| DiscreteSequence::new((0..32).map(|_| rng.random_range(0..16)).collect(), 16).unwrap())
        .collect();
    let mut g = c.benchmark_group("density");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new("nll_batch", name), &exec, |b, &e| {
            b.iter(|| nll_batch_with(black_box(&m), &xs, e).unwrap())
        });
    }
    g.finish();
}

fn experiment(c: &mut Criterion) {
    let mut cfg = presets::clusters_2d().unwrap();
    cfg.seeds = vec![0, 1, 2, 3];
    cfg.epochs = 2;
    cfg.finetune_epochs = 1;
    let mut g = c.benchmark_group("experiment");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new("run_seeds", name), &exec, |b, &e| {
            b.iter(|| run_seeds_with(&cfg, e).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, classifier, density, experiment);
criterion_main!(benches);
