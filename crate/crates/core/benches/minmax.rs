use std::hint::black_box;
use std::sync::Arc;

use closed_geodesics::exec::Executor;
use closed_geodesics::loops::{build_sweepout, latitude_map};
use closed_geodesics::manifold::{MetricChart, SPHERE_POLE_GUARD};
use closed_geodesics::shortening::{birkhoff_step, minmax, ShorteningConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn sphere() -> Arc<MetricChart> {
    Arc::new(MetricChart::sphere_chart(1.0, 1.0, SPHERE_POLE_GUARD).unwrap())
}

fn executors() -> [(&'static str, Executor); 2] {
    [("sequential", Executor::Sequential), ("parallel", Executor::Parallel)]
}

/// One shortening round over every loop of the latitude sweepout.
fn grid_round(c: &mut Criterion) {
    let s = sphere();
    let sw = build_sweepout(latitude_map(&s), &s, 2, 41, 80, Executor::Sequential).unwrap();
    let mut group = c.benchmark_group("grid_round");
    group.sample_size(10);
    for (name, exec) in executors() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| exec.try_map(sw.loops(), |_, lp| birkhoff_step(lp)).unwrap())
        });
    }
    group.finish();
}

/// The full latitude min-max run, sweepout construction included.
fn sphere_minmax(c: &mut Criterion) {
    let s = sphere();
    let cfg = ShorteningConfig::default();
    let mut group = c.benchmark_group("sphere_minmax");
    group.sample_size(10);
    for (name, exec) in executors() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let sw = build_sweepout(latitude_map(&s), &s, 2, 41, 80, exec).unwrap();
                black_box(minmax(&sw, None, &cfg, exec).unwrap().length)
            })
        });
    }
    group.finish();
}

criterion_group!(benches, grid_round, sphere_minmax);
criterion_main!(benches);
