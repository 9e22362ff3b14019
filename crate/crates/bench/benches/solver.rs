use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gammareg_bench::{design, initial_estimate};
use gammareg_core::model::{mm_weights, penalized_loss};
use gammareg_core::solver::{cd_sweep, fit};
use gammareg_core::FitConfig;

fn mm_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit");
    for &(n, p) in &[(100, 20), (100, 100), (400, 100)] {
        let sim = design(n, p, 0.1);
        let init = initial_estimate(&sim);
        let cfg = FitConfig::new(0.1, 0.2);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{n}x{p}")), &sim.train, |b, data| {
            b.iter(|| fit(data, &cfg, &init))
        });
    }
    group.finish();
}

fn kernels(c: &mut Criterion) {
    let sim = design(100, 100, 0.1);
    let init = initial_estimate(&sim);
    let cfg = FitConfig::new(0.1, 0.2);
    let weights = mm_weights(&sim.train, &init, 0.1).unwrap();
    c.bench_function("loss 100x100", |b| b.iter(|| penalized_loss(&sim.train, &init, &cfg.gamma_config())));
    c.bench_function("weights 100x100", |b| b.iter(|| mm_weights(&sim.train, &init, 0.1)));
    c.bench_function("cd sweep 100x100", |b| b.iter(|| cd_sweep(&sim.train, &init, &weights, 0.2, false)));
}

fn initializer(c: &mut Criterion) {
    let sim = design(100, 100, 0.1);
    let mut group = c.benchmark_group("ransac");
    group.sample_size(10);
    group.bench_function("100x100", |b| b.iter(|| initial_estimate(&sim)));
    group.finish();
}

criterion_group!(benches, mm_fit, kernels, initializer);
criterion_main!(benches);
