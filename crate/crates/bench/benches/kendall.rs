use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use tvt_bench::ranked_pair;
use tvt_core::kendall_tau;

fn bench_kendall(c: &mut Criterion) {
    let mut g = c.benchmark_group("kendall_tau_b");
    for n in [100usize, 1_000, 100_000] {
        let (x, y) = ranked_pair(n, 11);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| kendall_tau(black_box(&x), black_box(&y)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_kendall);
criterion_main!(benches);
