use std::hint::black_box;

use chainsde::ensemble::{map_paths, map_paths_sequential, NoiseSource};
use chainsde::{solve, ChainState, SolveConfig, SystemParams};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn solve_path(p: &SystemParams, noise: NoiseSource, cfg: &SolveConfig, i: usize) -> f64 {
    let path = noise.path(i, cfg.max_time, cfg.level).unwrap();
    solve(p, &path, cfg).unwrap().states().last().unwrap().x()
}

fn ensemble_solve(c: &mut Criterion) {
    let p = SystemParams::new(0.9, ChainState::new3(0.0, 0.0, 1.0, 0.0)).unwrap();
    let noise = NoiseSource::Brownian { master: 1 };
    let mut group = c.benchmark_group("ensemble_solve");
    group.sample_size(10);
    for level in [10u32, 14] {
        let cfg = SolveConfig::new(level, 4, 1.0);
        group.bench_with_input(BenchmarkId::new("parallel", level), &cfg, |b, cfg| {
            b.iter(|| map_paths(256, |i| solve_path(&p, noise, cfg, i)))
        });
        group.bench_with_input(BenchmarkId::new("sequential", level), &cfg, |b, cfg| {
            b.iter(|| map_paths_sequential(256, |i| solve_path(&p, noise, cfg, i)))
        });
    }
    group.finish();
}

fn path_refinement(c: &mut Criterion) {
    let noise = NoiseSource::Brownian { master: 2 };
    let mut group = c.benchmark_group("path_refinement");
    group.sample_size(10);
    let level = 16;
    group.bench_function(BenchmarkId::new("parallel", level), |b| {
        b.iter(|| map_paths(64, |i| black_box(noise.path(i, 1.0, level).unwrap().len())))
    });
    group.bench_function(BenchmarkId::new("sequential", level), |b| {
        b.iter(|| map_paths_sequential(64, |i| black_box(noise.path(i, 1.0, level).unwrap().len())))
    });
    group.finish();
}

criterion_group!(benches, ensemble_solve, path_refinement);
criterion_main!(benches);
