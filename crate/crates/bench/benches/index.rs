use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use erix_bench::population;
use erix_core::rlz::factorize_parallel;
use erix_core::OpenedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn factorize(c: &mut Criterion) {
    let f = population(200_000, 4, 1);
    let mut group = c.benchmark_group("factorize");
    group.sample_size(10);
    for workers in [1, 4] {
        group.bench_with_input(BenchmarkId::from_parameter(workers), &workers, |b, &w| {
            b.iter(|| factorize_parallel(black_box(&f.collection), &f.reference, 64, w).unwrap())
        });
    }
    group.finish();
}

fn locate(c: &mut Criterion) {
    let f = population(500_000, 5, 2);
    let bytes = f.index.to_bytes(&f.portfolio).unwrap();
    let opened = OpenedIndex::from_bytes(bytes, f.reference.clone(), &f.portfolio).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut group = c.benchmark_group("locate");
    for m in [20usize, 50, 100, 200, 500] {
        let patterns: Vec<Vec<u8>> = (0..64)
            .map(|_| {
                let s = f.collection[rng.gen_range(0..f.collection.len())].data();
                let at = rng.gen_range(0..=s.len() - m);
                s[at..at + m].to_vec()
            })
            .collect();
        group.bench_with_input(BenchmarkId::from_parameter(m), &patterns, |b, ps| {
            let mut i = 0;
            b.iter(|| {
                i = (i + 1) % ps.len();
                opened.locate(black_box(&ps[i])).unwrap()
            })
        });
    }
    group.finish();
}

fn save(c: &mut Criterion) {
    let f = population(200_000, 4, 4);
    let mut group = c.benchmark_group("save");
    group.sample_size(10);
    group.bench_function("to_bytes", |b| b.iter(|| f.index.to_bytes(black_box(&f.portfolio)).unwrap()));
    group.finish();
}

criterion_group!(benches, factorize, locate, save);
criterion_main!(benches);
