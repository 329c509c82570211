//! Benchmarks the Monte Carlo certification core: sequential chunk loop
//! versus the rayon-parallel chunk map over identical substreams.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use outage_power::model::{generate_interference_scenario, Caps, Geometry, ScenarioSpec};
use outage_power::montecarlo::{outage_counts_parallel, outage_counts_sequential};

fn bench_outage(c: &mut Criterion) {
    let spec = ScenarioSpec {
        k: 3,
        m: 3,
        kappa: 0.1,
        eps: 0.05,
        alpha: 1.0,
        seed: 7,
        geometry: Geometry::paper(),
        caps: Caps::default(),
        noise: 1.0,
    };
    let sc = generate_interference_scenario(&spec).unwrap();
    let p = [20.0, 20.0, 20.0];
    let mut group = c.benchmark_group("outage-certification");
    for &n in &[10_000usize, 100_000] {
        group.bench_with_input(BenchmarkId::new("sequential", n), &n, |b, &n| {
            b.iter(|| outage_counts_sequential(&sc, &p, n, 42))
        });
        group.bench_with_input(BenchmarkId::new("parallel", n), &n, |b, &n| {
            b.iter(|| outage_counts_parallel(&sc, &p, n, 42))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_outage);
criterion_main!(benches);
