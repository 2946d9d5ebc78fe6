use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use samplerlab::kernel::stationary;
use samplerlab::samplers::{run_trajectory, Family, SamplerConfig};
use samplerlab::Smoother;
use samplerlab_bench::{char_chain, half_masked, sparse_chain};

fn forward_backward(c: &mut Criterion) {
    let mut g = c.benchmark_group("forward_backward");
    for (name, chain, v) in [
        ("char_v27", char_chain(), 27),
        ("sparse_v1024_k32", sparse_chain(1024, 32), 1024),
    ] {
        for len in [256usize, 1024] {
            let z = half_masked(v, len);
            let mut s = Smoother::new();
            g.bench_with_input(BenchmarkId::new(name, len), &z, |b, z| {
                b.iter(|| {
                    s.smooth(&chain, black_box(z)).unwrap();
                })
            });
        }
    }
    g.finish();
}

fn sampler_trajectory(c: &mut Criterion) {
    let chain = char_chain();
    let mut g = c.benchmark_group("trajectory_t256");
    g.sample_size(10);
    for family in [Family::Mdlm, Family::Llada, Family::RemdmConf] {
        let cfg = SamplerConfig::new(family, 16, 7);
        let mut s = Smoother::new();
        g.bench_function(family.key(), |b| {
            b.iter(|| run_trajectory(&chain, &cfg, 256, 0, &mut s, false).unwrap())
        });
    }
    g.finish();
}

fn stationary_distribution(c: &mut Criterion) {
    let chain = sparse_chain(4096, 64);
    c.bench_function("stationary_v4096_k64", |b| {
        b.iter(|| stationary(black_box(chain.kernel()), 1e-12, 1_000_000).unwrap())
    });
}

criterion_group!(benches, forward_backward, sampler_trajectory, stationary_distribution);
criterion_main!(benches);
