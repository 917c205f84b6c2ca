use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kawarada_bench::Cube;
use kawarada_core::adapt::positivity_cap;
use kawarada_core::spectral::oracle::DenseOracle;
use kawarada_core::spectral::OracleCap;
use kawarada_core::stepper::lod_step;
use kawarada_core::{Axis, StepConfig};

fn lod_steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("lod_step");
    for n in [16, 32, 64] {
        let cube = Cube::new(n);
        let tau = positivity_cap(&cube.mesh, &cube.phi, &cube.spec);
        let cfg = StepConfig::default();
        group.bench_with_input(BenchmarkId::from_parameter(n), &cube, |b, cube| {
            b.iter(|| lod_step(black_box(&cube.state), tau, &cube.ops, &cube.spec, &cube.phi, &cfg).unwrap())
        });
    }
    group.finish();
}

fn directional_sweeps(c: &mut Criterion) {
    let cube = Cube::new(48);
    let tau = positivity_cap(&cube.mesh, &cube.phi, &cube.spec);
    let mut group = c.benchmark_group("backward_sweep_48");
    for axis in Axis::ALL {
        let op = cube.ops.get(axis).unwrap();
        group.bench_function(axis.to_string(), |b| {
            b.iter_batched_ref(
                || cube.state.values.clone(),
                |v| op.solve_backward_in_place(tau, v).unwrap(),
                criterion::BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

fn dense_oracle(c: &mut Criterion) {
    let cube = Cube::new(5);
    c.bench_function("dense_oracle_build_5", |b| {
        b.iter(|| DenseOracle::build(&cube.mesh, &cube.phi, cube.spec.edges, OracleCap::default()).unwrap())
    });
}

criterion_group!(benches, lod_steps, directional_sweeps, dense_oracle);
criterion_main!(benches);
