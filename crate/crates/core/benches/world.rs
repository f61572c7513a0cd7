use agentsim_core::scenario::{build_world, busy_crosswalk};
use agentsim_core::Execution;
use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};

fn step(c: &mut Criterion) {
    let cfg = busy_crosswalk(10);
    let mut g = c.benchmark_group("world_step_10_vehicles");
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter_batched(
                || build_world(&cfg, exec).unwrap().0,
                |mut world| {
                    let dt = world.config().dt;
                    for _ in 0..20 {
                        world.step(dt).unwrap();
                    }
                    world
                },
                BatchSize::SmallInput,
            )
        });
    }
    g.finish();
}

criterion_group!(benches, step);
criterion_main!(benches);
