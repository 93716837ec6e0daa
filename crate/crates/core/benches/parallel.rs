//! Sequential vs rayon execution of the data-parallel hot paths.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ttyrl::loader::{load, sample_sequences_with, LoaderMode, SamplerConfig};
use ttyrl::render::{render_batch_with, RenderSpec};
use ttyrl::stats::{stratified_bootstrap_ci, BootstrapConfig, Statistic};
use ttyrl::store::{write_store_with, Compression};
use ttyrl::synth::random_episodes;
use ttyrl::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn bootstrap(c: &mut Criterion) {
    let strata: Vec<Vec<f64>> = (0..38)
        .map(|t| (0..150).map(|i| ((t * 7919 + i * 104729) % 1000) as f64 / 10.0).collect())
        .collect();
    let cfg = BootstrapConfig {
        replicates: 500,
        ..Default::default()
    };
    let mut g = c.benchmark_group("bootstrap_iqm");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(stratified_bootstrap_ci(&strata, Statistic::Iqm, &cfg, exec).unwrap()))
        });
    }
    g.finish();
}

fn loader_and_render(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bench.ktb");
    let episodes = random_episodes(40, 100, 300, 1);
    write_store_with(&path, &episodes, Compression::Zstd, Exec::Parallel).unwrap();
    let handle = load(&path, LoaderMode::InMemory).unwrap();
    let cfg = SamplerConfig::new(64, 16, 0);

    let mut g = c.benchmark_group("sample_64x16");
    for (name, exec) in MODES {
        let mut call = 0;
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                call += 1;
                black_box(sample_sequences_with(&handle, &cfg, call, exec).unwrap())
            })
        });
    }
    g.finish();

    let batch = sample_sequences_with(&handle, &SamplerConfig::new(16, 8, 0), 0, Exec::Sequential).unwrap();
    let spec = RenderSpec::crop(9, 9);
    let mut g = c.benchmark_group("render_16x9");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| black_box(render_batch_with(&batch, &spec, exec))));
    }
    g.finish();

    let mut g = c.benchmark_group("store_write_zstd");
    g.sample_size(10);
    let out = dir.path().join("out.ktb");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(write_store_with(&out, &episodes, Compression::Zstd, exec).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bootstrap, loader_and_render);
criterion_main!(benches);
