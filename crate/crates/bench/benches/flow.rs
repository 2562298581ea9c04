use std::hint::black_box;

use cogflow::experiments::{run_timescale_scaling, ScalingConfig};
use cogflow::{
    integrate, solve_fast_equilibrium, step_rk4, CubicBenchmark, DecisionPotential, FlowSystem, IntegratorConfig,
    Metric, Partition, SolverOptions, State,
};
use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DVector;

fn metric(eps: f64) -> Metric {
    Metric::block_anisotropic(eps, Partition::new(1, 1).unwrap()).unwrap()
}

fn rk4_step(c: &mut Criterion) {
    let m = metric(0.1);
    let sys = FlowSystem::new(&CubicBenchmark, &m).unwrap();
    let s = State::from_slice(&[1.5, -1.0], 0.0).unwrap();
    c.bench_function("rk4_step_cubic", |b| {
        b.iter(|| step_rk4(&sys, black_box(&s), 0.01).unwrap())
    });
}

fn integrate_run(c: &mut Criterion) {
    let m = metric(0.1);
    let sys = FlowSystem::new(&CubicBenchmark, &m).unwrap();
    let s = State::from_slice(&[1.5, -1.0], 0.0).unwrap();
    let cfg = IntegratorConfig::new(0.01, 20.0);
    c.bench_function("integrate_cubic_2000_steps", |b| {
        b.iter(|| integrate(&sys, black_box(&s), &cfg, None).unwrap())
    });
}

fn equilibrium(c: &mut Criterion) {
    let opts = SolverOptions::default();
    let p = DecisionPotential::default();
    let cs = DVector::from_element(1, 0.7);
    let h0 = DVector::zeros(1);
    c.bench_function("fast_equilibrium_decision", |b| {
        b.iter(|| solve_fast_equilibrium(&p, black_box(&cs), &h0, 10.0, &opts).unwrap())
    });
}

fn scaling(c: &mut Criterion) {
    let cfg = ScalingConfig::default();
    let mut group = c.benchmark_group("experiments");
    group.sample_size(10);
    group.bench_function("timescale_scaling_single_thread", |b| {
        b.iter(|| run_timescale_scaling(&cfg, Some(1)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, rk4_step, integrate_run, equilibrium, scaling);
criterion_main!(benches);
