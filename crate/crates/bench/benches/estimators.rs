use std::hint::black_box;

use atme_core::estimators::{parallel_matching, parallel_regression, propensity_weighting};
use atme_core::kernel::{mahalanobis_match, mixture_mle};
use atme_core::sensitivity::{sensitivity_grid, KappaSplit, SensitivityOptions};
use atme_core::simulation::{generate, monte_carlo, DgpConfig, McEstimator, MonteCarloOptions};
use atme_core::{EstimatorOptions, Method};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;

fn estimators(c: &mut Criterion) {
    let opts = EstimatorOptions::default();
    let mut g = c.benchmark_group("estimators");
    for n in [1_000, 10_000] {
        let ds = generate(&DgpConfig::baseline().with_n(n).with_seed(1)).unwrap();
        g.bench_with_input(BenchmarkId::new("parallel_regression", n), &ds, |b, ds| {
            b.iter(|| parallel_regression(black_box(ds), &opts).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("propensity_weighting", n), &ds, |b, ds| {
            b.iter(|| propensity_weighting(black_box(ds), &opts).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("parallel_matching", n), &ds, |b, ds| {
            b.iter(|| parallel_matching(black_box(ds), &opts).unwrap())
        });
    }
    g.finish();
}

fn kernels(c: &mut Criterion) {
    let n = 2_000;
    let k = 4;
    let x = DMatrix::from_fn(n, k, |i, j| ((i * 31 + j * 17) as f64 * 0.013).sin());
    let group: Vec<u8> = (0..n).map(|i| u8::from(i % 3 == 0)).collect();
    c.bench_function("mahalanobis_match/2000x4", |b| {
        b.iter(|| mahalanobis_match(black_box(&x), &group, true).unwrap())
    });

    let ds = generate(&DgpConfig::baseline().with_n(1_000).with_seed(2)).unwrap();
    let (d0, _) = ds.split_by_treatment();
    c.bench_function("mixture_mle/500", |b| {
        b.iter(|| mixture_mle(black_box(&d0), 1.0, 0.5).unwrap())
    });
}

fn drivers(c: &mut Criterion) {
    let mut g = c.benchmark_group("drivers");
    g.sample_size(10);
    let cfg = DgpConfig::baseline().with_n(1_000).with_seed(3);
    let opts = MonteCarloOptions {
        replications: 100,
        estimators: vec![
            McEstimator::Standard(Method::ParallelRegression),
            McEstimator::Standard(Method::ControlledInteraction),
        ],
        estimator_options: EstimatorOptions::default(),
    };
    g.bench_function("monte_carlo/100x1000", |b| {
        b.iter(|| monte_carlo(black_box(&cfg), &opts).unwrap())
    });

    let ds = generate(&cfg).unwrap();
    let grid = [0.0, 0.5, 1.0, 1.5, 2.0];
    g.bench_function("sensitivity_grid/5x5", |b| {
        b.iter(|| {
            sensitivity_grid(
                black_box(&ds),
                &grid,
                &grid,
                KappaSplit::Symmetric,
                SensitivityOptions::default(),
            )
            .unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, estimators, kernels, drivers);
criterion_main!(benches);
