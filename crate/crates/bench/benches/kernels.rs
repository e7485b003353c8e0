use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use std::hint::black_box;

use graphret::adapter::{compute_attention, enhanced_predict};
use graphret::autodiff::Tape;
use graphret::gnn::{batch_loss, GnnConfig, GnnKind};
use graphret_bench::{adapter_fixture, gnn_fixture, random_index, random_query};

fn index_search(c: &mut Criterion) {
    let mut group = c.benchmark_group("index_search");
    for n in [1_000, 10_000] {
        let index = random_index(n, 64, 0);
        let q = random_query(64, 1);
        group.bench_with_input(BenchmarkId::new("k3", n), &n, |b, _| {
            b.iter(|| black_box(index.search(black_box(&q), 3).unwrap().len()))
        });
    }
    group.finish();
}

fn gnn_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("gnn");
    for kind in [GnnKind::Gin, GnnKind::Gcn] {
        let config = GnnConfig {
            kind,
            ..GnnConfig::default()
        };
        let fx = gnn_fixture(config, 32);
        let name = format!("{kind:?}").to_lowercase();
        group.bench_function(format!("{name}_forward"), |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let vars = fx.model.params().bind(&mut tape);
                black_box(fx.model.forward(&mut tape, &vars, &fx.batch, true).unwrap().output)
            })
        });
        group.bench_function(format!("{name}_forward_backward"), |b| {
            b.iter_batched(
                Tape::new,
                |mut tape| {
                    let vars = fx.model.params().bind(&mut tape);
                    let fwd = fx.model.forward(&mut tape, &vars, &fx.batch, true).unwrap();
                    let loss = batch_loss(&mut tape, fwd.output, &fx.labels, fx.dataset.task()).unwrap();
                    black_box(tape.backward(loss).unwrap())
                },
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

fn adapter(c: &mut Criterion) {
    let (params, inputs) = adapter_fixture(256, 64, 3);
    c.bench_function("adapter_attention_256", |b| {
        b.iter(|| {
            for (q, set) in &inputs {
                black_box(compute_attention(&params, &q.embedding, set).unwrap());
            }
        })
    });
    c.bench_function("adapter_predict_256", |b| {
        b.iter(|| {
            for (q, set) in &inputs {
                black_box(enhanced_predict(&params, q, set).unwrap());
            }
        })
    });
}

criterion_group!(benches, index_search, gnn_step, adapter);
criterion_main!(benches);
