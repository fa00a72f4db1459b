use criterion::{criterion_group, criterion_main, Criterion};
use sscgan::data::PatchSet;
use sscgan::nn::{normal_vec, seeded_rng};
use sscgan::{LossConfig, Mode, ModelConfig, Tensor, TrainPlan, Trainer};

fn random_patches(n: usize) -> PatchSet {
    let mut rng = seeded_rng(9);
    let pixels: Vec<u8> = normal_vec::<f64>(n * 3 * 50 * 50, &mut rng)
        .into_iter()
        .map(|v| (128.0 + 40.0 * v).clamp(0.0, 255.0) as u8)
        .collect();
    PatchSet::from_pixels(50, 50, pixels, (0..n).map(|i| i % 2).collect()).unwrap()
}

fn networks(c: &mut Criterion) {
    let mut trainer: Trainer<f32> = Trainer::new(
        &ModelConfig::default(),
        TrainPlan::default(),
        LossConfig::default(),
    )
    .unwrap();
    let z = Tensor::from_vec(normal_vec(32 * 100, &mut seeded_rng(1)), &[32, 100]).unwrap();
    let labels: Vec<usize> = (0..32).map(|i| i % 2).collect();
    let x = trainer
        .generator
        .forward(&z, &labels, Mode::Eval)
        .unwrap()
        .detach();
    c.bench_function("generator/forward_b32", |b| {
        b.iter(|| trainer.generator.forward(&z, &labels, Mode::Eval).unwrap())
    });
    c.bench_function("discriminator/forward_b32", |b| {
        b.iter(|| trainer.discriminator.forward(&x, None, Mode::Eval).unwrap())
    });
}

fn train_step(c: &mut Criterion) {
    let data = random_patches(64);
    let plan = TrainPlan {
        batch: 32,
        ..Default::default()
    };
    let mut trainer: Trainer<f32> =
        Trainer::new(&ModelConfig::default(), plan, LossConfig::default()).unwrap();
    let indices: Vec<usize> = (0..32).collect();
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("step_b32_omega1", |b| {
        b.iter(|| trainer.train_step(&data, &indices, 0, 0).unwrap())
    });
    group.finish();
}

criterion_group!(benches, networks, train_step);
criterion_main!(benches);
