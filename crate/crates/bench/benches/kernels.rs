//! Hot-kernel benchmarks: Monte Carlo path simulation, tail-metric reduction,
//! exact vector search, and the GARCH(1,1)-t fit that anchors the baselines.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use stresslab::baselines::fit_garch_t;
use stresslab::model::MacroShock;
use stresslab::nalgebra::DMatrix;
use stresslab::retrieval::FlatIndex;
use stresslab::risk::{simulate_paths, tail_metrics, Channel, PathKey};
use stresslab_bench::{clustered_returns, synthetic_corpus, synthetic_cov, synthetic_paths};

fn bench_simulate_paths(c: &mut Criterion) {
    let n_assets = 12;
    let horizon = 63;
    let cov = synthetic_cov(n_assets, 11);
    let mu = DMatrix::zeros(n_assets, horizon);
    let key = PathKey::new(42, &MacroShock::new(-3.0, 1.0, 1.0), 0.6, Channel::Linear);
    let portfolios = vec![
        ("A".to_string(), vec![1.0 / n_assets as f64; n_assets]),
        ("B".to_string(), {
            let mut w = vec![0.5 / (n_assets - 1) as f64; n_assets];
            w[0] = 0.5;
            w
        }),
    ];
    c.bench_function("simulate_paths_2000x63x12", |b| {
        b.iter(|| {
            simulate_paths(
                black_box(&mu),
                black_box(&cov),
                2000,
                horizon,
                &key,
                0.5,
                &portfolios,
            )
            .unwrap()
        })
    });
}

fn bench_tail_metrics(c: &mut Criterion) {
    let paths = synthetic_paths(2000, 63, 7);
    c.bench_function("tail_metrics_2000x63", |b| {
        b.iter(|| tail_metrics(black_box(&paths)).unwrap())
    });
}

fn bench_top_k(c: &mut Criterion) {
    let corpus = synthetic_corpus(500, 64, 3);
    let index = FlatIndex::build(&corpus, 0, "bench").unwrap();
    let query: Vec<f64> = corpus[250].1.clone();
    c.bench_function("flat_index_top20_of_500", |b| {
        b.iter(|| index.top_k(black_box(&query), 20))
    });
}

fn bench_garch_fit(c: &mut Criterion) {
    let returns = clustered_returns(1250, 5);
    let mut group = c.benchmark_group("garch");
    group.sample_size(10);
    group.bench_function("fit_garch_t_1250", |b| {
        b.iter(|| fit_garch_t(black_box(&returns)).unwrap())
    });
    group.finish();
}

criterion_group!(
    kernels,
    bench_simulate_paths,
    bench_tail_metrics,
    bench_top_k,
    bench_garch_fit
);
criterion_main!(kernels);
