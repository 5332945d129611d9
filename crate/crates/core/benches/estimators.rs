use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use meshcva::{estimate_c1, estimate_c2, CvaProblem, EpsilonSchedule, Execution, Variant};

fn estimators(c: &mut Criterion) {
    let p = CvaProblem::brownian_example(20).unwrap();
    let s = EpsilonSchedule::with_defaults(Variant::C1, 1);
    let mut g = c.benchmark_group("estimators");
    g.sample_size(10);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        for l in [100usize, 400] {
            g.bench_with_input(BenchmarkId::new(format!("c1/{name}"), l), &l, |b, &l| {
                b.iter(|| estimate_c1(&p, l, &s, 7, exec).unwrap())
            });
            g.bench_with_input(BenchmarkId::new(format!("c2/{name}"), l), &l, |b, &l| {
                b.iter(|| estimate_c2(&p, l, 2000, &s, 7, exec).unwrap())
            });
        }
    }
    g.finish();
}

criterion_group!(benches, estimators);
criterion_main!(benches);
