//! Criterion benchmarks for the numerical hot paths. The bench target only
//! wires [`benchmarks`] into a criterion group.

use std::hint::black_box;

use criterion::{BenchmarkId, Criterion, Throughput};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sigscore::censoring::{fit_mcd, McdOptions};
use sigscore::paths::AugmentedPath;
use sigscore::sigkernel::{gram, sig_kernel, KernelConfig};
use sigscore::truncsig::truncated_signature;

/// Random-walk paths with a trailing time channel.
pub fn walks(n: usize, rows: usize, variates: usize, seed: u64) -> Vec<AugmentedPath> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut level = vec![0.0; variates];
            let mut data = Vec::with_capacity(rows * (variates + 1));
            for r in 0..rows {
                for v in level.iter_mut() {
                    *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
                }
                data.extend_from_slice(&level);
                data.push(r as f64 / (rows - 1) as f64);
            }
            AugmentedPath::from_rows(data, variates + 1).expect("well-formed rows")
        })
        .collect()
}

fn kernel(c: &mut Criterion) {
    let mut group = c.benchmark_group("sig_kernel");
    let paths = walks(2, 26, 4, 1);
    for order in [0u32, 1, 2] {
        let cfg = KernelConfig::rbf(1.5).with_dyadic_order(order);
        group.bench_with_input(BenchmarkId::new("rbf_26x5", order), &cfg, |b, cfg| {
            b.iter(|| sig_kernel(black_box(&paths[0]), black_box(&paths[1]), cfg).unwrap())
        });
    }
    let cfg = KernelConfig::linear().with_dyadic_order(2);
    group.bench_function("linear_26x5/2", |b| {
        b.iter(|| sig_kernel(black_box(&paths[0]), black_box(&paths[1]), &cfg).unwrap())
    });
    group.finish();
}

fn gram_matrix(c: &mut Criterion) {
    let mut group = c.benchmark_group("gram");
    group.sample_size(10);
    let cfg = KernelConfig::rbf(1.5).with_dyadic_order(1);
    for n in [16usize, 64] {
        let x = walks(n, 26, 4, 2);
        let y = walks(n, 26, 4, 3);
        group.throughput(Throughput::Elements((n * n) as u64));
        group.bench_with_input(BenchmarkId::new("square", n), &x, |b, x| {
            b.iter(|| gram(black_box(x), None, &cfg, false).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("cross", n), &(x.clone(), y), |b, (x, y)| {
            b.iter(|| gram(black_box(x), Some(y), &cfg, true).unwrap())
        });
    }
    group.finish();
}

fn signature(c: &mut Criterion) {
    let mut group = c.benchmark_group("truncated_signature");
    let path = &walks(1, 26, 4, 4)[0];
    for depth in [2usize, 3, 4] {
        group.bench_with_input(BenchmarkId::from_parameter(depth), &depth, |b, &depth| {
            b.iter(|| truncated_signature(black_box(path), depth).unwrap())
        });
    }
    group.finish();
}

fn mcd(c: &mut Criterion) {
    let mut group = c.benchmark_group("fast_mcd");
    group.sample_size(10);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (n, p) in [(500usize, 5usize), (2000, 5), (512, 30)] {
        let data = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let opts = McdOptions::default();
        group.bench_with_input(BenchmarkId::new("fit", format!("{n}x{p}")), &data, |b, data| {
            b.iter(|| fit_mcd(black_box(data), 0.8, &opts).unwrap())
        });
    }
    group.finish();
}

pub fn benchmarks(c: &mut Criterion) {
    kernel(c);
    gram_matrix(c);
    signature(c);
    mcd(c);
}
