use sscgan::models::filter_counts;
use sscgan::nn::{normal_vec, seeded_rng};
use sscgan::verify::{gradient_error, FD_STEP};
use sscgan::{Conditioning, Discriminator, Error, Generator, Mode, ModelConfig, Tensor};

/// Parameter count from the layer list alone: 3×3 kernels, biases on plain
/// layers, gamma and beta on batch-normed ones.
fn counted_params(omega: usize, in_channels: usize) -> (usize, usize) {
    let f: Vec<usize> = (1..=5).map(|l| 64 * l * omega).collect();
    let features = f[4] * 2 * 2;
    let mut g = (100 + 2) * features + 2 * features;
    let mut chans: Vec<usize> = f.iter().rev().copied().collect();
    chans.push(3);
    for i in 0..5 {
        g += 9 * chans[i] * chans[i + 1]
            + if i < 4 {
                2 * chans[i + 1]
            } else {
                chans[i + 1]
            };
    }
    let mut c = vec![in_channels];
    c.extend(&f);
    let mut d: usize = (0..5).map(|i| 9 * c[i] * c[i + 1] + c[i + 1]).sum();
    d += features + 1 + 2 * features + 2;
    (g, d)
}

#[test]
fn parameter_counts_are_pinned() {
    // (omega, generator, discriminator, discriminator with label planes)
    let golden = [
        (1, 1_610_691, 1_481_091, 1_482_243),
        (2, 6_170_499, 5_911_299, 5_913_603),
        (4, 24_137_475, 23_619_075, 23_623_683),
    ];
    for (omega, g_count, d_count, d_both) in golden {
        assert_eq!(counted_params(omega, 3), (g_count, d_count));
        assert_eq!(counted_params(omega, 5).1, d_both);
        let cfg = ModelConfig::with_omega(omega);
        assert_eq!(
            Generator::<f32>::build(&cfg, 0).unwrap().param_count(),
            g_count,
            "omega {omega}"
        );
        assert_eq!(
            Discriminator::<f32>::build(&cfg, 0).unwrap().param_count(),
            d_count,
            "omega {omega}"
        );
        let both = ModelConfig {
            conditioning: Conditioning::Both,
            ..cfg
        };
        assert_eq!(
            Discriminator::<f32>::build(&both, 0).unwrap().param_count(),
            d_both
        );
    }
}

#[test]
fn filter_sequences() {
    assert_eq!(filter_counts(1).unwrap(), [64, 128, 192, 256, 320]);
    assert_eq!(filter_counts(2).unwrap(), [128, 256, 384, 512, 640]);
    assert_eq!(filter_counts(4).unwrap(), [256, 512, 768, 1024, 1280]);
    assert!(matches!(filter_counts(0), Err(Error::Config(_))));
    assert_eq!(ModelConfig::with_omega(4).feature_width().unwrap(), 5120);
}

#[test]
fn geometry_plans() {
    let cfg = ModelConfig::default();
    let plan: Vec<usize> = cfg.spatial_plan().unwrap().iter().map(|p| p.0).collect();
    assert_eq!(plan, vec![50, 25, 13, 7, 4, 2]);
    let pads: Vec<usize> = cfg
        .generator_output_pads()
        .unwrap()
        .iter()
        .map(|p| p.0)
        .collect();
    assert_eq!(pads, vec![1, 0, 0, 0, 1]);
}

fn latent(batch: usize, seed: u64) -> Tensor<f32> {
    Tensor::from_vec(
        normal_vec(batch * 100, &mut seeded_rng(seed)),
        &[batch, 100],
    )
    .unwrap()
}

#[test]
fn forward_shapes_and_range() {
    let cfg = ModelConfig::default();
    let mut g = Generator::<f32>::build(&cfg, 1).unwrap();
    let mut d = Discriminator::<f32>::build(&cfg, 1).unwrap();
    let labels = [0, 1, 0, 1, 1, 0, 0, 1];
    for mode in [Mode::Train, Mode::Eval] {
        let x = g.forward(&latent(8, 2), &labels, mode).unwrap();
        assert_eq!(x.shape(), &[8, 3, 50, 50]);
        assert!(x.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let out = d.forward(&x, None, mode).unwrap();
        assert_eq!(out.adv.shape(), &[8, 1]);
        assert_eq!(out.class.shape(), &[8, 2]);
        // Fresh class head is zero: uniform posterior.
        assert!(out.class.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn conditioning_contract() {
    let cfg = ModelConfig::default();
    let mut d = Discriminator::<f32>::build(&cfg, 0).unwrap();
    let x = Tensor::<f32>::zeros(&[2, 3, 50, 50]);
    assert!(matches!(
        d.forward(&x, Some(&[0, 1]), Mode::Eval),
        Err(Error::Mode(_))
    ));

    let both = ModelConfig {
        conditioning: Conditioning::Both,
        ..cfg.clone()
    };
    let mut d = Discriminator::<f32>::build(&both, 0).unwrap();
    assert_eq!(d.layers()[0].weight.shape()[1], 5);
    assert!(matches!(
        d.forward(&x, None, Mode::Eval),
        Err(Error::Mode(_))
    ));
    assert!(d.forward(&x, Some(&[0, 1]), Mode::Eval).is_ok());

    let mut g = Generator::<f32>::build(&cfg, 0).unwrap();
    assert!(matches!(
        g.forward(&latent(2, 0), &[0, 2], Mode::Eval),
        Err(Error::Label {
            label: 2,
            classes: 2
        })
    ));
}

#[test]
fn identical_inputs_give_identical_rows() {
    let cfg = ModelConfig::default();
    let mut d = Discriminator::<f32>::build(&cfg, 4).unwrap();
    let mut g = Generator::<f32>::build(&cfg, 4).unwrap();
    let one = g
        .forward(&latent(2, 5), &[1, 1], Mode::Eval)
        .unwrap()
        .narrow(0, 0, 1)
        .unwrap();
    let x = Tensor::concat(&[&one, &one, &one], 0).unwrap();
    let out = d.forward(&x, None, Mode::Eval).unwrap();
    let a = out.adv.data();
    assert!(a[0] == a[1] && a[1] == a[2]);
}

#[test]
fn label_changes_the_sample() {
    let mut g = Generator::<f32>::build(&ModelConfig::default(), 3).unwrap();
    let z = latent(4, 9);
    let a = g.forward(&z, &[0; 4], Mode::Eval).unwrap();
    let b = g.forward(&z, &[1; 4], Mode::Eval).unwrap();
    let diff: f32 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .sum::<f32>()
        / a.numel() as f32;
    assert!(diff > 0.0);
    // Eval mode is deterministic.
    assert_eq!(g.forward(&z, &[0; 4], Mode::Eval).unwrap().data(), a.data());
}

#[test]
fn end_to_end_latent_gradient_matches_finite_differences() {
    let cfg = ModelConfig::default();
    let mut g = Generator::<f64>::build(&cfg, 11).unwrap();
    let mut d = Discriminator::<f64>::build(&cfg, 11).unwrap();
    // Give the class head weights so both heads carry gradient.
    d.class_head_mut()
        .init_parameters(sscgan::nn::InitSpec::default(), &mut seeded_rng(12));
    let labels = [0, 1];
    let z = Tensor::<f64>::from_vec(normal_vec(200, &mut seeded_rng(13)), &[2, 100]).unwrap();
    let mut loss = |inputs: &[Tensor<f64>]| {
        let x = g.forward(&inputs[0], &labels, Mode::Eval)?;
        let out = d.forward(&x, None, Mode::Eval)?;
        out.adv.sum().add(&out.class.scale(0.5).sum())
    };
    let err = gradient_error(&mut loss, &[z], FD_STEP).unwrap();
    assert!(err < 1e-3, "relative error {err:e}");
}
