use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use disgan_bench::{batch, bundle, scored};
use disgan_core::diff::{Tape, Tensor};
use disgan_core::explain::auc;
use disgan_core::gan::{generator_losses, train_step, Conditioning, GanOptimizer};
use disgan_core::geometry::ClampCounter;

fn tape(c: &mut Criterion) {
    let a = Tensor::matrix(16, 32, (0..512).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let b = Tensor::matrix(32, 32, (0..1024).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap();
    c.bench_function("tape matmul tanh backward 16x32x32", |bench| {
        bench.iter(|| {
            let mut t = Tape::new();
            let x = t.constant(a.clone());
            let w = t.param(b.clone());
            let h = t.matmul(x, w).unwrap();
            let h = t.tanh(h);
            let l = t.mean_all(h);
            black_box(t.backward(l).unwrap());
        })
    });
}

fn gan(c: &mut Criterion) {
    let b = batch(2, 16, 1);
    let proto = bundle(2, 0);
    let cond = Conditioning::measure(proto.aux(), &b, false, &ClampCounter::new()).unwrap();
    c.bench_function("generator losses batch 16", |bench| {
        bench.iter(|| black_box(generator_losses(&proto, &b, &cond).unwrap()))
    });
    c.bench_function("train step batch 16", |bench| {
        bench.iter_batched(
            || (proto.clone(), GanOptimizer::new(0.5, 0.999, 1e-4)),
            |(mut bundle, mut opt)| black_box(train_step(&mut bundle, &mut opt, &b, &cond, 1e-4, 0).unwrap()),
            BatchSize::SmallInput,
        )
    });
}

fn metrics(c: &mut Criterion) {
    let (scores, labels) = scored(10_000, 2);
    c.bench_function("auc 10k", |bench| bench.iter(|| black_box(auc(&scores, &labels).unwrap())));
}

criterion_group!(benches, tape, gan, metrics);
criterion_main!(benches);
