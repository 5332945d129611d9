use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use meshcva::estimators::build_mesh;
use meshcva::models::ProjectedState;
use meshcva::{kernel, CvaProblem, Execution};

fn pairwise(c: &mut Criterion) {
    let mut g = c.benchmark_group("kernel");
    for n in [256usize, 4096] {
        let pts: Vec<f64> = (0..n).map(|j| (j as f64 * 0.618).sin() * 2.0).collect();
        let bias: Vec<f64> = (0..n).map(|j| (j % 7) as f64 * 0.1).collect();
        let vals: Vec<f64> = (0..n).map(|j| (j % 5) as f64 - 2.0).collect();
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::new("weighted_sum", n), &n, |b, _| {
            b.iter(|| kernel::weighted_sum(&pts, 1, black_box(&[0.3]), 1.7, &bias, &vals))
        });
        g.bench_with_input(BenchmarkId::new("log_sum", n), &n, |b, _| {
            b.iter(|| kernel::log_sum(&pts, 1, black_box(&[0.3]), 1.7))
        });
    }
    g.finish();
}

fn apply_batch(c: &mut Criterion) {
    let p = CvaProblem::brownian_example(10).unwrap();
    let f = |x: &[f64]| x[0];
    let mut g = c.benchmark_group("apply_batch");
    g.sample_size(10);
    for l in [200usize, 800] {
        let ctx = build_mesh(&p, l, 0.01, 1, Execution::Sequential).unwrap();
        ctx.precompute(&[(1, 1)], Execution::Sequential).unwrap();
        let qs: Vec<ProjectedState> = (0..l).map(|j| ProjectedState::new(1, vec![j as f64 / l as f64 * 4.0 - 2.0])).collect();
        g.throughput(Throughput::Elements((l * l) as u64));
        for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            g.bench_with_input(BenchmarkId::new(name, l), &l, |b, _| {
                b.iter(|| ctx.apply_batch(1, &f, 5, 1, &qs, exec).unwrap())
            });
        }
    }
    g.finish();
}

criterion_group!(benches, pairwise, apply_batch);
criterion_main!(benches);
