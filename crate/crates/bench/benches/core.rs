use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use wmera_bench::{product_dataset, random_tensor, rng};
use wmera_core::coarsegrain::coarse_grain_sample;
use wmera_core::trainer::{init_weights, sweep, Direction};
use wmera_core::{svd_split, Compression, Mps, TrainConfig, Truncation};

fn bench_contract(c: &mut Criterion) {
    let mut group = c.benchmark_group("contract");
    let mut r = rng(1);
    for chi in [8, 32, 64] {
        let a = random_tensor(&[chi, 2, chi], &mut r);
        let b = random_tensor(&[chi, 2, chi], &mut r);
        group.bench_with_input(BenchmarkId::from_parameter(chi), &chi, |bch, _| {
            bch.iter(|| a.contract(black_box(&b), &[(2, 0)]).unwrap())
        });
    }
    group.finish();
}

fn bench_svd_split(c: &mut Criterion) {
    let mut group = c.benchmark_group("svd_split");
    let mut r = rng(2);
    for chi in [8, 16, 32] {
        let t = random_tensor(&[chi, 2, 2, chi], &mut r);
        let trunc = Truncation::new(1e-10, chi).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(chi), &chi, |bch, _| {
            bch.iter(|| svd_split(black_box(&t), &[0, 1], trunc).unwrap())
        });
    }
    group.finish();
}

fn bench_coarse_grain(c: &mut Criterion) {
    let mut group = c.benchmark_group("coarse_grain");
    let mut r = rng(3);
    for n in [64, 256] {
        let x = &product_dataset(1, n, &mut r).samples[0];
        group.bench_with_input(BenchmarkId::new("two_layers", n), &n, |bch, _| {
            bch.iter(|| coarse_grain_sample(black_box(x), 2, Compression::default()).unwrap())
        });
    }
    group.finish();
}

fn bench_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    let mut r = rng(4);
    for chi in [4, 16] {
        let data = product_dataset(100, 16, &mut r);
        let cfg = TrainConfig {
            chi_max: chi,
            init_bond: chi,
            ..TrainConfig::default()
        };
        let w: Mps = init_weights(&[2; 16], &cfg).unwrap();
        group.bench_with_input(BenchmarkId::new("right", chi), &chi, |bch, _| {
            bch.iter(|| sweep(black_box(&w), &data, &cfg, Direction::Right).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_contract, bench_svd_split, bench_coarse_grain, bench_sweep);
criterion_main!(benches);
