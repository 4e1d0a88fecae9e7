use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use mlbrl_core::sampler::SweepKernel;
use mlbrl_core::{
    build_comparison_cube, build_proposal_pool, simulate, simulation_schema, solve_assignment, ChainConfig,
    Hyperparams, Matching, Method, Sampler, SimulationConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn data(error: f64) -> mlbrl_core::simulation::SimulatedData {
    simulate(&SimulationConfig {
        region_error: error,
        income_error: error,
        dob_error: error,
        seed: 1,
        ..Default::default()
    })
    .expect("default simulation is valid")
}

fn cube_build(c: &mut Criterion) {
    let d = data(0.2);
    let schema = simulation_schema(false);
    c.bench_function("cube_build_30x40", |b| {
        b.iter(|| build_comparison_cube(black_box(&d.f1.file), black_box(&d.f2.file), &schema).unwrap())
    });
}

fn record_sweep(c: &mut Criterion) {
    let d = data(0.2);
    let cube = build_comparison_cube(&d.f1.file, &d.f2.file, &simulation_schema(false)).unwrap();
    let (s, t) = d.truth.blocks[0];
    let pair = cube.pair(s, t);
    let ratio: Vec<f64> = (0..cube.pattern_count()).map(|k| k as f64 * 0.5 - 2.0).collect();
    let kernel = SweepKernel::new(&ratio, 1.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut m = Matching::empty(pair.rows, pair.cols);
    c.bench_function("record_sweep_20x30", |b| b.iter(|| kernel.sweep(&mut m, pair, &mut rng)));
}

fn assignment(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n1, n2) = (20, 30);
    let w: Vec<f64> = (0..n1 * n2).map(|_| rng.random_range(-3.0..3.0)).collect();
    c.bench_function("assignment_20x30", |b| b.iter(|| solve_assignment(black_box(&w), n1, n2)));
}

fn pool(c: &mut Criterion) {
    let d = data(0.2);
    let cube = build_comparison_cube(&d.f1.file, &d.f2.file, &simulation_schema(false)).unwrap();
    c.bench_function("proposal_pool_30x40", |b| b.iter(|| build_proposal_pool(&cube, true).unwrap()));
}

fn chain_iteration(c: &mut Criterion) {
    let d = data(0.2);
    let cube = build_comparison_cube(&d.f1.file, &d.f2.file, &simulation_schema(false)).unwrap();
    let chain = ChainConfig {
        iterations: 1_000_000,
        seed: 4,
        ..Default::default()
    };
    let mut group = c.benchmark_group("chain_iteration");
    group.sample_size(20);
    for method in [Method::Mlbrl, Method::Cibrl] {
        group.bench_function(method.to_string(), |b| {
            b.iter_batched_ref(
                || Sampler::new(&cube, Hyperparams::default(), chain.clone(), method).unwrap(),
                |sampler| sampler.step(0).unwrap(),
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, cube_build, record_sweep, assignment, pool, chain_iteration);
criterion_main!(benches);
