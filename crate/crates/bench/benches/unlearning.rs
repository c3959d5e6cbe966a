// SPDX-License-Identifier: Apache-2.0

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use recunlearn::model::HessianOperator;
use recunlearn::{auc, unlearn_params, Model, ModelKind, NeighborIndex, SolverConfig, UnlearnOptions};
use recunlearn_bench::fixture;

const KINDS: [ModelKind; 2] = [ModelKind::Mf, ModelKind::LightGcn { layers: 1 }];

fn hvp(c: &mut Criterion) {
    let f = fixture(2000, 2000, 50_000, 32);
    let index = NeighborIndex::build(&f.train);
    let mut group = c.benchmark_group("hvp");
    for kind in KINDS {
        let model = Model::for_params(kind, &f.params, Some(&index), 1e-4).unwrap();
        let scale = 1.0 / f.train.len() as f64;
        let mut op = HessianOperator::new(&model, &f.params.values, &f.train.records, scale, 1e-6).unwrap();
        let mut out = vec![0.0; f.params.len()];
        group.bench_function(kind.name(), |b| {
            b.iter(|| op.apply_into(black_box(&f.params.values), &mut out))
        });
    }
    group.finish();
}

fn gradient(c: &mut Criterion) {
    let f = fixture(2000, 2000, 50_000, 32);
    let index = NeighborIndex::build(&f.train);
    let mut group = c.benchmark_group("grad_total");
    for kind in KINDS {
        let model = Model::for_params(kind, &f.params, Some(&index), 1e-4).unwrap();
        group.bench_function(kind.name(), |b| {
            b.iter(|| model.grad_total(black_box(&f.params.values), &f.train.records).unwrap())
        });
    }
    group.finish();
}

fn unlearn(c: &mut Criterion) {
    let f = fixture(500, 500, 12_000, 16);
    let mut group = c.benchmark_group("unlearn");
    group.sample_size(20);
    for kind in KINDS {
        for pruning in [None, Some(vec![1.0, 0.2])] {
            if pruning.is_some() && kind == ModelKind::Mf {
                continue;
            }
            let options = UnlearnOptions {
                solver: SolverConfig {
                    learning_rate: 10.0,
                    tolerance: 1e-2,
                    damping: 1e-2,
                    ..SolverConfig::default()
                },
                pruning: pruning.clone(),
                ..UnlearnOptions::default()
            };
            let label = if pruning.is_some() { "pruned" } else { "full" };
            group.bench_with_input(BenchmarkId::new(kind.name(), label), &options, |b, options| {
                b.iter(|| unlearn_params(&f.params, kind, 1e-4, &f.train, &f.manifest, options).unwrap())
            });
        }
    }
    group.finish();
}

fn auc_rank(c: &mut Criterion) {
    let n = 100_000;
    let scores: Vec<f64> = (0..n).map(|k| ((k * 7919) % 1000) as f64 / 1000.0).collect();
    let labels: Vec<bool> = (0..n).map(|k| (k * 31) % 5 < 2).collect();
    c.bench_function("auc/100k", |b| b.iter(|| auc(black_box(&scores), &labels).unwrap()));
}

criterion_group!(benches, hvp, gradient, unlearn, auc_rank);
criterion_main!(benches);
