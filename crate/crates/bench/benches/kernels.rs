use std::hint::black_box;

use apfopf::kernels::kernel_samples;
use apfopf::{eval_allpass, eval_rotated, eval_trig, KernelParam, RotationRef};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

const N: usize = 4096;

fn deltas() -> Vec<f64> {
    (0..N).map(|k| -0.6 + 1.2 * k as f64 / (N - 1) as f64).collect()
}

fn kernels(c: &mut Criterion) {
    let d = deltas();
    let p = KernelParam::default();
    let r = RotationRef::new(0.15);
    let mut g = c.benchmark_group("kernel_eval");
    g.throughput(Throughput::Elements(N as u64));
    g.bench_function("trig", |b| {
        b.iter(|| d.iter().map(|&x| eval_trig(black_box(x)).unwrap().s).sum::<f64>())
    });
    g.bench_function("allpass", |b| {
        b.iter(|| d.iter().map(|&x| eval_allpass(black_box(x), p).unwrap().s).sum::<f64>())
    });
    g.bench_function("rotated", |b| {
        b.iter(|| d.iter().map(|&x| eval_rotated(&r, black_box(x), p).unwrap().s).sum::<f64>())
    });
    g.finish();
}

fn samples(c: &mut Criterion) {
    let mut g = c.benchmark_group("kernel_samples");
    for points in [361, 3601] {
        g.bench_with_input(BenchmarkId::from_parameter(points), &points, |b, &n| {
            b.iter(|| kernel_samples(-180.0, 180.0, n, KernelParam::default(), 0.0).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, kernels, samples);
criterion_main!(benches);
