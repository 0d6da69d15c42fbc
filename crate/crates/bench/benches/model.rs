use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use metatree::generate::generate_tree;
use metatree::model::ModelConfig;
use metatree::train::{gen_corpus, xor_datasets, Schedule, Trainer};
use metatree_bench::{desk_model, xor_block};

fn forward(c: &mut Criterion) {
    let model = desk_model(1);
    let b = xor_block(256, 10, 3);
    let mut g = c.benchmark_group("desk");
    g.sample_size(10);
    g.bench_function("scores 256x10", |bench| bench.iter(|| model.scores(black_box(&b), None).unwrap()));
    g.bench_function("generate depth 2", |bench| bench.iter(|| generate_tree(&model, black_box(&b), 2, 0).unwrap()));
    g.finish();
}

fn train_step(c: &mut Criterion) {
    let ds = xor_datasets(1, 0.15, 8, 4, 512, 5).unwrap();
    let corpus = gen_corpus(&ds, 1, 5);
    let schedule = Schedule { batch: 4, ..Schedule::default() };
    let mut t: Trainer<f32> = Trainer::new(&corpus, &ModelConfig::desk(), schedule).unwrap();
    let mut g = c.benchmark_group("desk");
    g.sample_size(10);
    g.bench_function("train step, batch 4", |bench| bench.iter(|| t.step(&corpus).unwrap()));
    g.finish();
}

criterion_group!(benches, forward, train_step);
criterion_main!(benches);
