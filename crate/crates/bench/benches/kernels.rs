use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sscgan::nn::{normal_vec, power_iteration, seeded_rng};
use sscgan::tensor::{conv2d, grad};
use sscgan::Tensor;

fn randn(shape: &[usize], seed: u64) -> Vec<f32> {
    let mut rng = seeded_rng(seed);
    normal_vec(shape.iter().product(), &mut rng)
}

/// The discriminator's five convolutions at ω=1, batch 32.
fn conv_layers(c: &mut Criterion) {
    let layers = [
        (3, 64, 50),
        (64, 128, 25),
        (128, 192, 13),
        (192, 256, 7),
        (256, 320, 4),
    ];
    let mut group = c.benchmark_group("conv2d");
    for (i, &(cin, cout, hw)) in layers.iter().enumerate() {
        let x = Tensor::from_vec(randn(&[32, cin, hw, hw], 1), &[32, cin, hw, hw]).unwrap();
        let k = Tensor::param(randn(&[cout, cin, 3, 3], 2), &[cout, cin, 3, 3]).unwrap();
        group.bench_with_input(BenchmarkId::new("forward", i + 1), &(), |b, _| {
            b.iter(|| conv2d(&x, &k, 2, 1).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("forward_backward", i + 1), &(), |b, _| {
            b.iter(|| {
                let y = conv2d(&x, &k, 2, 1).unwrap();
                grad(&y.sum(), &[&k], false).unwrap()
            })
        });
    }
    group.finish();
}

fn spectral(c: &mut Criterion) {
    let (rows, cols) = (320, 256 * 9);
    let w: Vec<f64> = normal_vec(rows * cols, &mut seeded_rng(3));
    let u: Vec<f64> = normal_vec(rows, &mut seeded_rng(4));
    c.bench_function("power_iteration/1_step_320x2304", |b| {
        b.iter(|| power_iteration(&w, rows, cols, &u, 1))
    });
}

criterion_group!(benches, conv_layers, spectral);
criterion_main!(benches);
