use std::hint::black_box;

use autoq_bench::{graded_policy, hardware, synthetic_network};
use autoq_core::accuracy::{derive_sensitivities, proxy_accuracy, AccuracyConfig};
use autoq_core::cost::{cost_report, min_remaining_cost, spatial_latency, SubKernelPolicy};
use autoq_core::model::PartialPolicy;
use autoq_core::quantize::{quantize_learned_basis, quantize_uniform};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn estimators(c: &mut Criterion) {
    let hw = hardware();
    let mut group = c.benchmark_group("estimators");
    for (layers, c_out) in [(4, 16), (10, 1000)] {
        let net = synthetic_network(layers, c_out);
        let params = derive_sensitivities(&net, &AccuracyConfig::default()).unwrap();
        let policy = graded_policy(&net);
        let sub = SubKernelPolicy::whole(&net, &policy);
        let mut prefix = PartialPolicy::from_policy(&policy);
        prefix.weight_qbn[layers / 2].iter_mut().for_each(|w| *w = None);
        let kernels = layers * c_out;
        group.bench_with_input(BenchmarkId::new("cost_report", kernels), &policy, |b, p| {
            b.iter(|| cost_report(&net, &params, black_box(p), &hw).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("proxy_accuracy", kernels), &policy, |b, p| {
            b.iter(|| proxy_accuracy(&params, black_box(p)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("min_remaining_cost", kernels), &prefix, |b, p| {
            b.iter(|| min_remaining_cost(&net, &params, black_box(p), &hw).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("spatial_latency", kernels), &sub, |b, p| {
            b.iter(|| spatial_latency(&net, black_box(p), &hw).unwrap())
        });
    }
    group.finish();
}

fn quantizers(c: &mut Criterion) {
    // 3x3x64 kernel with a deterministic spread of magnitudes
    let kernel: Vec<f64> = (0..576).map(|i| ((i * 7919) % 1000) as f64 / 500.0 - 1.0).collect();
    let mut group = c.benchmark_group("quantize");
    for bits in [2u8, 4, 8] {
        group.bench_with_input(BenchmarkId::new("uniform", bits), &bits, |b, &bits| {
            b.iter(|| quantize_uniform(black_box(&kernel), bits).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("learned", bits), &bits, |b, &bits| {
            b.iter(|| quantize_learned_basis(black_box(&kernel), bits, 30).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, estimators, quantizers);
criterion_main!(benches);
