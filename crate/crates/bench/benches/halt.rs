use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion, Throughput};
use dpss_core::perf::{mu_sweep, one_bucket_items, synthetic_items};
use dpss_core::samplers::{bgeo, tgeo};
use dpss_core::{sort_via_dpss, Halt, Item, QueryParams, RandomSource, Rational};

const SIZES: [usize; 3] = [10_000, 100_000, 1_000_000];

fn build(c: &mut Criterion) {
    let mut g = c.benchmark_group("build");
    g.sample_size(10);
    for n in SIZES {
        let items = synthetic_items(n, 1);
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::from_parameter(n), &items, |b, items| {
            b.iter(|| Halt::build(black_box(items)).unwrap())
        });
    }
    g.finish();
}

fn update(c: &mut Criterion) {
    let mut g = c.benchmark_group("update");
    for n in SIZES {
        let items = synthetic_items(n, 2);
        let mut h = Halt::build(&items).unwrap();
        let mut src = RandomSource::new(3);
        let mut next = n as u64;
        // Replace the oldest item with a fresh one; the size stays at `n`.
        g.bench_function(BenchmarkId::new("delete+insert", n), |b| {
            b.iter(|| {
                h.delete(next - n as u64).unwrap();
                h.insert(Item::new(next, 1 + src.random_word() % (1 << 40))).unwrap();
                next += 1;
            })
        });
    }
    g.finish();
}

fn query(c: &mut Criterion) {
    let mut g = c.benchmark_group("query");
    let items = one_bucket_items(100_000, 4);
    let h = Halt::build(&items).unwrap();
    let mut src = RandomSource::new(5);
    let mut out = Vec::new();
    for params in mu_sweep(&items).unwrap().iter().step_by(3) {
        let mu = h.expected_size(params).unwrap().to_f64();
        g.bench_function(BenchmarkId::new("mu", format!("{mu:.3}")), |b| {
            b.iter(|| {
                out.clear();
                h.query_into(params, &mut src, &mut out).unwrap();
                black_box(out.len())
            })
        });
    }
    let mixed = synthetic_items(100_000, 6);
    let h = Halt::build(&mixed).unwrap();
    let params = QueryParams::from_ratios(1, 1, 0, 1).unwrap();
    g.bench_function("log-uniform alpha=1", |b| {
        b.iter(|| {
            out.clear();
            h.query_into(&params, &mut src, &mut out).unwrap();
            black_box(out.len())
        })
    });
    g.finish();
}

fn geometric(c: &mut Criterion) {
    let mut g = c.benchmark_group("geometric");
    let mut src = RandomSource::new(7);
    for (p, n) in [((1, 3), 64), ((1, 1000), 1 << 20), ((1, 1 << 20), 1 << 30)] {
        let p = Rational::ratio(p.0, p.1).unwrap();
        g.bench_function(BenchmarkId::new("bgeo", format!("{p} n={n}")), |b| {
            b.iter(|| bgeo(&mut src, &p, n).unwrap())
        });
        g.bench_function(BenchmarkId::new("tgeo", format!("{p} n={n}")), |b| {
            b.iter(|| tgeo(&mut src, &p, n).unwrap())
        });
    }
    g.finish();
}

fn sort(c: &mut Criterion) {
    let mut g = c.benchmark_group("sort");
    g.sample_size(10);
    let mut src = RandomSource::new(8);
    let mut values: Vec<u64> = (0..1u64 << 20).collect();
    for i in (1..values.len()).rev() {
        values.swap(i, src.random_below(i as u64 + 1).unwrap() as usize);
    }
    values.truncate(10_000);
    g.bench_function("10^4 values", |b| {
        b.iter_batched(|| RandomSource::new(9), |mut s| sort_via_dpss(&values, &mut s).unwrap(), BatchSize::SmallInput)
    });
    g.finish();
}

criterion_group!(benches, build, update, query, geometric, sort);
criterion_main!(benches);
