use aim_bench::fixture;
use aim_core::estimate::{egm_search, integral_matching, ImOptions};
use aim_core::optim::{prox_operator, LambdaPath, PenaltyConfig, PenaltyKind};
use aim_core::smooth::{smooth_dataset, SmootherSpec, DEFAULT_GRID_DENSITY};
use aim_core::{solve_ivp, solve_sensitivities, SolveConfig};
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn ode(c: &mut Criterion) {
    let sim = fixture("lotka-volterra", 1);
    let space = &sim.truth.space;
    let x0 = &sim.design.initial_states[0];
    let times = &sim.design.times[0];
    let cfg = SolveConfig::rkf45(1e-8, 1e-6);
    c.bench_function("solve_ivp lv d=10", |b| {
        b.iter(|| solve_ivp(space, black_box(&sim.truth.theta), x0, times, &cfg).unwrap())
    });
    c.bench_function("solve_sensitivities lv d=10 p=110", |b| {
        b.iter(|| {
            solve_sensitivities(
                space,
                black_box(&sim.truth.theta),
                x0,
                times,
                &cfg,
                &Default::default(),
            )
            .unwrap()
        })
    });
}

fn estimators(c: &mut Criterion) {
    let sim = fixture("lotka-volterra", 1);
    let sm = smooth_dataset(&sim.dataset, &SmootherSpec::LINEAR, DEFAULT_GRID_DENSITY).unwrap();
    let pen = PenaltyConfig::new(PenaltyKind::L1).with_path(LambdaPath::Auto {
        n: 50,
        min_ratio: 1e-4,
    });
    c.bench_function("integral matching path lv p=110", |b| {
        b.iter(|| {
            integral_matching(
                &sim.truth.space,
                &sim.dataset,
                &sm,
                &pen,
                &ImOptions::default(),
            )
            .unwrap()
        })
    });

    let sim = fixture("enzyme-network", 1);
    let sm = smooth_dataset(
        &sim.dataset,
        &SmootherSpec::kernel(1.0),
        DEFAULT_GRID_DENSITY,
    )
    .unwrap();
    let mut g = c.benchmark_group("egm");
    g.sample_size(10);
    g.bench_function("enzyme d=7 K=5", |b| {
        b.iter(|| egm_search(&sim.truth.space, &sim.dataset, &sm, 5).unwrap())
    });
    g.finish();
}

fn prox(c: &mut Criterion) {
    let n = 10_000;
    let theta: Vec<f64> = (0..n)
        .map(|j| ((j * 37) % 101) as f64 / 50.0 - 1.0)
        .collect();
    let grad: Vec<f64> = (0..n)
        .map(|j| ((j * 13) % 97) as f64 / 48.0 - 1.0)
        .collect();
    let mu = vec![1.0; n];
    let bounds = vec![(0.0, f64::INFINITY); n];
    c.bench_function("prox_operator p=10000", |b| {
        b.iter(|| prox_operator(black_box(&theta), &grad, 0.1, 0.05, &mu, &bounds))
    });
}

criterion_group!(benches, ode, estimators, prox);
criterion_main!(benches);
