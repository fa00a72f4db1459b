use rand::Rng;

use crate::error::{Error, Result};
use crate::models::{Conditioning, Discriminator, Generator};
use crate::nn::SeededRng;
use crate::tensor::{bce_with_logits, grad, no_grad, softmax_cross_entropy, Mode, Scalar, Tensor};

/// Added under the square root of the penalty's gradient norm.
const NORM_EPS: f64 = 1e-30;

/// Generator adversarial objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdvForm {
    /// Minimize `log(1 − D(G(z|y)))`.
    Minimax,
    /// Maximize `log D(G(z|y))`.
    #[default]
    NonSaturating,
}

impl AdvForm {
    pub fn as_str(self) -> &'static str {
        match self {
            AdvForm::Minimax => "minimax",
            AdvForm::NonSaturating => "non-saturating",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "minimax" => Ok(AdvForm::Minimax),
            "non-saturating" | "non_saturating" | "non_saturating_g" => Ok(AdvForm::NonSaturating),
            other => Err(Error::Config(format!(
                "unknown adversarial form {other:?} (expected minimax or non-saturating)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub adv_form: AdvForm,
    pub lambda_gp: f64,
    pub lambda_cls: f64,
    /// Also train the class head on generated samples with their conditioning labels.
    pub classify_fakes: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            adv_form: AdvForm::NonSaturating,
            lambda_gp: 1.0,
            lambda_cls: 1.0,
            classify_fakes: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_gp", self.lambda_gp),
            ("lambda_cls", self.lambda_cls),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be a finite non-negative number, got {v}"
                )));
            }
        }
        Ok(())
    }
}

fn targets<T: Scalar>(like: &Tensor<T>, value: f64) -> Tensor<T> {
    Tensor::full(like.shape(), T::of(value))
}

/// Discriminator and generator losses of the two-player game on raw logits.
///
/// `d_loss = BCE(real→1) + BCE(fake→0)`; the generator's loss is
/// `−BCE(fake→0)` (minimax) or `BCE(fake→1)` (non-saturating).
pub fn gan_value<T: Scalar>(
    real_logits: &Tensor<T>,
    fake_logits: &Tensor<T>,
    form: AdvForm,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let fake_as_fake = bce_with_logits(fake_logits, &targets(fake_logits, 0.0))?;
    let d_loss = bce_with_logits(real_logits, &targets(real_logits, 1.0))?.add(&fake_as_fake)?;
    Ok((d_loss, generator_adversarial(fake_logits, form)?))
}

fn generator_adversarial<T: Scalar>(fake_logits: &Tensor<T>, form: AdvForm) -> Result<Tensor<T>> {
    match form {
        AdvForm::Minimax => Ok(bce_with_logits(fake_logits, &targets(fake_logits, 0.0))?.neg()),
        AdvForm::NonSaturating => bce_with_logits(fake_logits, &targets(fake_logits, 1.0)),
    }
}

/// Mean over samples of `(‖∇_x̂ f(x̂)‖₂ − 1)²` at `x̂ = ε·x_real + (1−ε)·x_fake`,
/// with one `ε` per sample. `f` maps a batch to `[b, 1]` logits; the result
/// stays differentiable with respect to whatever `f` closes over.
pub fn gradient_penalty_with<T: Scalar>(
    mut f: impl FnMut(&Tensor<T>) -> Result<Tensor<T>>,
    x_real: &Tensor<T>,
    x_fake: &Tensor<T>,
    eps: &[f64],
) -> Result<Tensor<T>> {
    if x_real.shape() != x_fake.shape() {
        return Err(Error::shape(
            "gradient_penalty",
            x_real.shape(),
            x_fake.shape(),
        ));
    }
    let b = x_real.shape()[0];
    if eps.len() != b {
        return Err(Error::shape("gradient_penalty", &[b], &[eps.len()]));
    }
    let per = x_real.numel() / b.max(1);
    let mixed: Vec<T> = x_real
        .data()
        .iter()
        .zip(x_fake.data())
        .enumerate()
        .map(|(i, (&r, &f))| {
            let e = T::of(eps[i / per]);
            e * r + (T::one() - e) * f
        })
        .collect();
    let x_hat = Tensor::param(mixed, x_real.shape())?;
    let out = f(&x_hat)?;
    let g = grad(&out.sum(), &[&x_hat], true)?.pop().expect("one input");
    let sq = g.reshape(&[b, per])?.square().sum_keep_axis(0)?;
    let norm = sq.add_scalar(NORM_EPS).sqrt();
    Ok(norm.add_scalar(-1.0).square().mean())
}

/// Gradient penalty on the discriminator's adversarial head; a conditioned
/// discriminator sees `labels` on the interpolates.
pub fn gradient_penalty<T: Scalar>(
    d: &mut Discriminator<T>,
    x_real: &Tensor<T>,
    x_fake: &Tensor<T>,
    labels: Option<&[usize]>,
    rng: &mut SeededRng,
) -> Result<Tensor<T>> {
    let eps: Vec<f64> = (0..x_real.shape()[0])
        .map(|_| rng.random::<f64>())
        .collect();
    gradient_penalty_with(
        |x| Ok(d.forward(x, labels, Mode::Train)?.adv),
        x_real,
        x_fake,
        &eps,
    )
}

/// Discriminator objective and its parts, as plain numbers for tracing.
#[derive(Debug, Clone)]
pub struct DLoss<T: Scalar> {
    pub total: Tensor<T>,
    pub adv: f64,
    pub cls: f64,
    pub gp: f64,
}

/// Adversarial terms + `λ_cls`·class-head cross-entropy on real patches
/// (and on fakes when `classify_fakes`) + `λ_gp`·gradient penalty.
///
/// `x_fake` must already be cut off from the generator.
#[allow(clippy::too_many_arguments)]
pub fn semi_supervised_d_loss<T: Scalar>(
    d: &mut Discriminator<T>,
    x_real: &Tensor<T>,
    y_real: &[usize],
    x_fake: &Tensor<T>,
    y_fake: &[usize],
    cfg: &LossConfig,
    rng: &mut SeededRng,
) -> Result<DLoss<T>> {
    if x_fake.is_tracked() && !x_fake.is_leaf() {
        return Err(Error::Config(
            "fake batch for the discriminator step must be detached".into(),
        ));
    }
    let n_real = x_real.shape()[0];
    let n_fake = x_fake.shape()[0];
    let both = Tensor::concat(&[x_real, x_fake], 0)?;
    let all_labels: Vec<usize> = y_real.iter().chain(y_fake).copied().collect();
    let conditioned = d.config().conditioning == Conditioning::Both;
    let out = d.forward(&both, conditioned.then_some(&all_labels[..]), Mode::Train)?;

    let (d_adv, _) = gan_value(
        &out.adv.narrow(0, 0, n_real)?,
        &out.adv.narrow(0, n_real, n_fake)?,
        AdvForm::NonSaturating,
    )?;
    let mut total = d_adv.clone();

    let mut cls_value = 0.0;
    if cfg.lambda_cls > 0.0 {
        let class = if conditioned {
            d.class_logits(&both, Mode::Train)?
        } else {
            out.class
        };
        let cls = if cfg.classify_fakes {
            softmax_cross_entropy(&class, &all_labels)?
        } else {
            softmax_cross_entropy(&class.narrow(0, 0, n_real)?, y_real)?
        };
        cls_value = cls.item()?.f64();
        total = total.add(&cls.scale(cfg.lambda_cls))?;
    }

    let mut gp_value = 0.0;
    if cfg.lambda_gp > 0.0 {
        let n = n_real.min(n_fake);
        let xr = x_real.narrow(0, 0, n)?.detach();
        let xf = x_fake.narrow(0, 0, n)?.detach();
        let labels = conditioned.then_some(&y_real[..n]);
        let gp = gradient_penalty(d, &xr, &xf, labels, rng)?;
        gp_value = gp.item()?.f64();
        total = total.add(&gp.scale(cfg.lambda_gp))?;
    }

    Ok(DLoss {
        adv: d_adv.item()?.f64(),
        cls: cls_value,
        gp: gp_value,
        total,
    })
}

#[derive(Debug, Clone)]
pub struct GLoss<T: Scalar> {
    pub total: Tensor<T>,
    pub adv: f64,
    pub cls: f64,
}

/// Generator objective for already generated `x_fake = G(z|y)`: the
/// adversarial term plus `λ_cls`·cross-entropy of the class head against `y`.
pub fn generator_loss_on<T: Scalar>(
    d: &mut Discriminator<T>,
    x_fake: &Tensor<T>,
    y: &[usize],
    cfg: &LossConfig,
) -> Result<GLoss<T>> {
    let conditioned = d.config().conditioning == Conditioning::Both;
    let out = d.forward(x_fake, conditioned.then_some(y), Mode::Train)?;
    let adv = generator_adversarial(&out.adv, cfg.adv_form)?;
    let mut total = adv.clone();
    let mut cls_value = 0.0;
    if cfg.lambda_cls > 0.0 {
        let class = if conditioned {
            d.class_logits(x_fake, Mode::Train)?
        } else {
            out.class
        };
        let cls = softmax_cross_entropy(&class, y)?;
        cls_value = cls.item()?.f64();
        total = total.add(&cls.scale(cfg.lambda_cls))?;
    }
    Ok(GLoss {
        adv: adv.item()?.f64(),
        cls: cls_value,
        total,
    })
}

/// [`generator_loss_on`] for `G(z|y)` produced in train mode.
pub fn generator_loss<T: Scalar>(
    d: &mut Discriminator<T>,
    g: &mut Generator<T>,
    z: &Tensor<T>,
    y: &[usize],
    cfg: &LossConfig,
) -> Result<GLoss<T>> {
    let x_fake = g.forward(z, y, Mode::Train)?;
    generator_loss_on(d, &x_fake, y, cfg)
}

/// `G(z|y)` with no graph, for the discriminator step.
pub fn generate_detached<T: Scalar>(
    g: &mut Generator<T>,
    z: &Tensor<T>,
    y: &[usize],
    mode: Mode,
) -> Result<Tensor<T>> {
    let _guard = no_grad();
    g.forward(z, y, mode)
}
