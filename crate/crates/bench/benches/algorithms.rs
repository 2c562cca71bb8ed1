use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use flare_bench::{integer_rows, labels_for, unit_vectors};
use flare_core::eval::metrics::compute_metrics;
use flare_core::selection::{ridge_solve, standardize};
use flare_core::similarity::top_k;
use flare_core::tree::{DecisionTree, ForestConfig, RandomForest, TreeConfig};
use flare_core::DecisionValue;

fn trees(c: &mut Criterion) {
    let mut group = c.benchmark_group("tree_fit");
    for n in [200usize, 1000] {
        let x = integer_rows(n, 12, 1);
        let y = labels_for(&x, 4, 2);
        group.bench_with_input(BenchmarkId::new("gini_depth10", n), &n, |b, _| {
            b.iter(|| {
                DecisionTree::fit(black_box(&x), black_box(&y), TreeConfig::default()).unwrap()
            })
        });
    }
    let x = integer_rows(500, 12, 3);
    let y = labels_for(&x, 4, 4);
    let cfg = ForestConfig {
        n_trees: 25,
        ..Default::default()
    };
    group.bench_function("forest_25x500", |b| {
        b.iter(|| RandomForest::fit(black_box(&x), black_box(&y), cfg).unwrap())
    });
    group.finish();
}

fn ridge(c: &mut Criterion) {
    let rows = integer_rows(1000, 20, 5);
    let y: Vec<f64> = rows
        .iter()
        .map(|r| r[0] * 0.5 - r[3] + r[7] * 0.2)
        .collect();
    c.bench_function("ridge_1000x20", |b| {
        b.iter(|| {
            let (z, _, _) = standardize(black_box(&rows));
            ridge_solve(&z, black_box(&y), 1.0).unwrap()
        })
    });
}

fn retrieval(c: &mut Criterion) {
    let mut group = c.benchmark_group("top_k");
    let query = unit_vectors(1, 256, 6).remove(0);
    for n in [100usize, 5000] {
        let pool = unit_vectors(n, 256, 7);
        group.bench_with_input(BenchmarkId::new("k2_dim256", n), &n, |b, _| {
            b.iter(|| top_k(black_box(&query), pool.iter().map(Vec::as_slice), 2))
        });
    }
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let to_decision = |v: usize| {
        if v == 1 {
            DecisionValue::Evacuate
        } else {
            DecisionValue::Stay
        }
    };
    let x = integer_rows(10_000, 2, 8);
    let labels: Vec<DecisionValue> = labels_for(&x, 2, 9).into_iter().map(to_decision).collect();
    let preds: Vec<DecisionValue> = labels_for(&x, 2, 10).into_iter().map(to_decision).collect();
    c.bench_function("metrics_10k", |b| {
        b.iter(|| compute_metrics(black_box(&preds), black_box(&labels)).unwrap())
    });
}

criterion_group!(benches, trees, ridge, retrieval, metrics);
criterion_main!(benches);
