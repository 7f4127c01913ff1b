use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use liqsolve_bench::{geometric, quadratic, solved};
use liqsolve_core::{
    simulate_cost, solve_2bsde, solve_singular, terminal_slice, Strategy, TruncationLadder,
};
use std::hint::black_box;

fn backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("2bsde");
    for n in [100, 200, 400] {
        let (model, lat) = quadratic(n, 2 * n + 1);
        let term = terminal_slice(&model, &lat, Some(1e4));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| solve_2bsde(&model, &lat, black_box(&term), Some(1e4)).unwrap())
        });
    }
    group.finish();
}

fn ladder(c: &mut Criterion) {
    let (model, lat) = geometric(200, 401);
    let mut group = c.benchmark_group("ladder");
    group.sample_size(10);
    group.bench_function("geometric-200x401", |b| {
        b.iter(|| solve_singular(&model, &lat, &TruncationLadder::default()).unwrap())
    });
    group.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let (model, lat) = quadratic(100, 201);
    let sol = solved(&model, &lat);
    let opt = Strategy::optimal(&sol, &model, &lat).unwrap();
    let mut group = c.benchmark_group("monte-carlo");
    group.sample_size(10);
    group.bench_function("10k-paths", |b| {
        b.iter(|| simulate_cost(&opt, &model, &lat, &sol.policy, 1.0, 10_000, 1, None).unwrap())
    });
    group.finish();
}

criterion_group!(benches, backward, ladder, monte_carlo);
criterion_main!(benches);
