use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use jtcse::model::forward;
use jtcse::train::{train_step, Adam, TrainConfig};
use jtcse::Graph;
use jtcse_bench::{matrix, Fixture};

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul_fwd_bwd");
    for n in [32, 64, 128] {
        let (a, b) = (matrix(n, n, 1), matrix(n, n, 2));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| {
                let mut g = Graph::new();
                let (va, vb) = (g.param(a.clone()), g.param(b.clone()));
                let y = g.matmul(va, vb).unwrap();
                let s = g.sum(y);
                g.backward(s).unwrap();
                black_box(g.value(s).item())
            })
        });
    }
    group.finish();
}

fn encoder_forward(c: &mut Criterion) {
    let fx = Fixture::new(16);
    c.bench_function("encoder_forward_b16", |bench| {
        bench.iter(|| black_box(forward(&fx.model.encoder_i, &fx.batch, 0, false).unwrap()))
    });
}

fn twin_train_step(c: &mut Criterion) {
    let fx = Fixture::new(16);
    let cfg = TrainConfig::default();
    let mut model = fx.model.clone();
    let mut opt = Adam::new(cfg.optimizer);
    let mut step = 0;
    c.bench_function("twin_train_step_b16", |bench| {
        bench.iter(|| {
            step += 1;
            black_box(train_step(&mut model, &mut opt, &fx.batch, &cfg, step).unwrap())
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = matmul, encoder_forward, twin_train_step
}
criterion_main!(benches);
