use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use heapguard_bench::populated_heap;

fn range_query(c: &mut Criterion) {
    let mut g = c.benchmark_group("range_query");
    for live in [100, 10_000] {
        let (mut rt, addrs) = populated_heap(live);
        g.bench_with_input(BenchmarkId::from_parameter(live), &live, |b, _| {
            let mut k = 0;
            b.iter(|| {
                k = (k + 7919) % addrs.len();
                rt.range_query(std::hint::black_box(addrs[k] + 3)).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, range_query);
criterion_main!(benches);
