use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use cssl_core::cssl::{ssl_risk_grad, train, CsslModel, Mode, RiskInputs, TrainConfig};
use cssl_core::datagen::{synthetic_dataset, SynthParams};
use cssl_core::infobounds::{mc_kl_gaussian_mixture, ToyProblem};
use cssl_core::losses::LossSpec;
use cssl_core::nn::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_matrix(&mut rng, 32, 784);
    let b = random_matrix(&mut rng, 784, 64);
    c.bench_function("matmul 32x784 * 784x64", |bench| bench.iter(|| black_box(&a).matmul(black_box(&b)).unwrap()));
}

fn risk_gradient(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = CsslModel::new(50, &[10], 2, &mut rng).unwrap();
    let xl = random_matrix(&mut rng, 32, 50);
    let yl: Vec<usize> = (0..32).map(|i| i % 2).collect();
    let xu = random_matrix(&mut rng, 320, 50);
    let loss = LossSpec::log_loss();
    c.bench_function("ssl risk + gradient, batch 32/320", |bench| {
        bench.iter(|| ssl_risk_grad(&model, RiskInputs::full(&xl, &yl, &xu), 0.02, &loss).unwrap())
    });
}

fn training(c: &mut Criterion) {
    let lab = SynthParams::new(0.01, 0.05, 0.01, 2.0).unwrap();
    let data = synthetic_dataset(lab, lab.with_a1(0.8), lab.with_a1(0.8), 300, 3000, 500, 3).unwrap();
    let cfg = TrainConfig {
        mode: Mode::Cssl,
        epochs: 5,
        warmup_epochs: 0,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("cssl 5 epochs, n=300 m=3000", |bench| bench.iter(|| train(&cfg, &data).unwrap()));
    group.finish();
}

fn enumeration(c: &mut Criterion) {
    let problems: Vec<ToyProblem> = (0..20).map(ToyProblem::random).collect();
    c.bench_function("toy enumeration x20", |bench| {
        bench.iter(|| {
            for p in &problems {
                black_box(p.enumerate().unwrap());
            }
        })
    });
}

fn mc_kl(c: &mut Criterion) {
    let lab = SynthParams::new(0.01, 0.05, 0.01, 2.0).unwrap();
    c.bench_function("mc kl 2000 samples", |bench| {
        bench.iter(|| mc_kl_gaussian_mixture(&lab, &lab.with_a1(0.3), 2000, 5).unwrap())
    });
}

criterion_group!(kernels, matmul, risk_gradient, training, enumeration, mc_kl);
criterion_main!(kernels);
