use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use clickforge::train::{train_panoptic, train_standard, TrainConfig};
use clickforge_bench::scenes;

/// One training epoch per iteration: N-pass against single-pass.
fn epochs(c: &mut Criterion) {
    let cfg = TrainConfig { epochs: 1, ..TrainConfig::panoptic() };
    let mut group = c.benchmark_group("epoch");
    group.sample_size(10);
    for n in [2, 4, 8] {
        let data = scenes(n, 2);
        group.bench_with_input(BenchmarkId::new("standard", n), &data, |b, d| {
            b.iter(|| train_standard(d, &cfg, false).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("panoptic", n), &data, |b, d| {
            b.iter(|| train_panoptic(d, &cfg, false).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, epochs);
criterion_main!(benches);
