//! Parallel against single-threaded throughput of the data-parallel stages.
//!
//! Each benchmark runs once inside a one-thread rayon pool and once in the
//! default pool. Building with `--no-default-features` swaps rayon out for
//! the sequential code path altogether.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::ThreadPool;

use noon_gyro::estimator::{bootstrap_from_fit, fit_rate_model, FitOptions};
use noon_gyro::physics::RateModelParams;
use noon_gyro::precision::{block_precision, OmegaReference};
use noon_gyro::rotsim::{simulate_binned_counts, simulate_time_tags, RotationProfile, SourceModel};

fn pools() -> Vec<(String, ThreadPool)> {
    let default = rayon::ThreadPoolBuilder::new().build().unwrap();
    let threads = default.current_num_threads();
    vec![
        ("single".into(), rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        (format!("pool-{threads}"), default),
    ]
}

fn binned_simulation(c: &mut Criterion) {
    let params = RateModelParams::one_photon_reference();
    let profile = RotationProfile::reference_sweep(1).unwrap();
    let mut group = c.benchmark_group("simulate_binned_counts");
    for (label, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&label), |b| {
            pool.install(|| b.iter(|| simulate_binned_counts(&params, &profile, 1).unwrap()))
        });
    }
    group.finish();
}

fn time_tags(c: &mut Criterion) {
    let params = RateModelParams::two_photon_reference();
    let profile = RotationProfile::constant(0.35, 0.2).unwrap();
    let source = SourceModel::default();
    let mut group = c.benchmark_group("simulate_time_tags");
    group.sample_size(20);
    for (label, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&label), |b| {
            pool.install(|| b.iter(|| simulate_time_tags(&source, &params, &profile, 1).unwrap()))
        });
    }
    group.finish();
}

fn bootstrap(c: &mut Criterion) {
    let params = RateModelParams::two_photon_reference();
    let profile = RotationProfile::reference_sweep(2).unwrap();
    let series = simulate_binned_counts(&params, &profile, 2).unwrap();
    let opts = FitOptions::default();
    let full = fit_rate_model(&series, 2, None, &opts).unwrap();
    let mut group = c.benchmark_group("bootstrap_100");
    group.sample_size(10);
    for (label, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&label), |b| {
            pool.install(|| b.iter(|| bootstrap_from_fit(&series, &full, 100, 3, &opts).unwrap()))
        });
    }
    group.finish();
}

fn blocks(c: &mut Criterion) {
    let params = RateModelParams::one_photon_reference();
    let series = simulate_binned_counts(&params, &RotationProfile::reference_sweep(1).unwrap(), 4).unwrap();
    let mut group = c.benchmark_group("block_precision");
    for (label, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&label), |b| {
            pool.install(|| b.iter(|| block_precision(&series, &params, OmegaReference::Instantaneous).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, binned_simulation, time_tags, bootstrap, blocks);
criterion_main!(benches);
