//! Numerical oracles: central-difference gradient checks, an SVD reference
//! for power iteration, adjointness of the convolution family, the
//! gradient-penalty double backward, and the published-table identities.

use rand::Rng;

use crate::error::Result;
use crate::metrics::{accuracy_at_prevalence, balanced_accuracy, f1_score};
use crate::nn::{normal_vec, power_iteration, seeded_rng, SeededRng};
use crate::tensor::{
    batchnorm2d, bce_with_logits, conv2d, conv2d_kernel_grad, conv_output_extent, conv_transpose2d,
    conv_transpose2d_to, conv_transpose_output_extent, grad_allow_unused, softmax_cross_entropy,
    Mode, RunningStats, Tensor,
};
use crate::train::gradient_penalty_with;

/// Central-difference step for 64-bit checks.
pub const FD_STEP: f64 = 1e-5;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const PENALTY_TOLERANCE: f64 = 1e-3;
pub const SPECTRAL_TOLERANCE: f64 = 1e-3;
pub const SPECTRAL_ITERATIONS: usize = 50;
pub const ADJOINT_TOLERANCE: f64 = 1e-10;
/// An owned [`Objective`].
/// A scalar-valued function of several tensors.
pub type ScalarFn = Box<Objective<'static>>;

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn within(name: impl Into<String>, error: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            passed: error <= tolerance,
            detail: format!("max error {error:.3e} (tolerance {tolerance:.0e})"),
        }
    }
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`; the absolute difference when both are ~0.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

/// A scalar-valued function of several tensors.
pub type Objective<'a> = dyn FnMut(&[Tensor<f64>]) -> Result<Tensor<f64>> + 'a;

/// Reverse-mode gradient of `f` with respect to each input; inputs `f` ignores get zeros.
pub fn analytic_gradient(f: &mut Objective<'_>, inputs: &[Tensor<f64>]) -> Result<Vec<Vec<f64>>> {
    let params: Vec<Tensor<f64>> = inputs.iter().map(|t| t.to_param()).collect();
    let out = f(&params)?;
    let refs: Vec<&Tensor<f64>> = params.iter().collect();
    Ok(grad_allow_unused(&out, &refs, false)?
        .into_iter()
        .zip(inputs)
        .map(|(g, x)| g.map_or_else(|| vec![0.0; x.numel()], |g| g.to_vec()))
        .collect())
}

/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every element of every input.
pub fn numeric_gradient(
    f: &mut Objective<'_>,
    inputs: &[Tensor<f64>],
    step: f64,
) -> Result<Vec<Vec<f64>>> {
    let mut consts: Vec<Tensor<f64>> = inputs.iter().map(|t| t.detach()).collect();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let base = inputs[i].to_vec();
        let mut g = vec![0.0; base.len()];
        for j in 0..base.len() {
            let mut probe = base.clone();
            probe[j] = base[j] + step;
            consts[i] = Tensor::from_vec(probe.clone(), inputs[i].shape())?;
            let plus = f(&consts)?.item()?;
            probe[j] = base[j] - step;
            consts[i] = Tensor::from_vec(probe, inputs[i].shape())?;
            let minus = f(&consts)?.item()?;
            g[j] = (plus - minus) / (2.0 * step);
        }
        consts[i] = inputs[i].detach();
        out.push(g);
    }
    Ok(out)
}

/// Largest per-input relative error between analytic and central-difference gradients.
pub fn gradient_error(f: &mut Objective<'_>, inputs: &[Tensor<f64>], step: f64) -> Result<f64> {
    let analytic = analytic_gradient(f, inputs)?;
    let numeric = numeric_gradient(f, inputs, step)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a, n))
        .fold(0.0, f64::max))
}

/// One randomly drawn instance of a differentiable op, reduced to a scalar.
pub struct OpCase {
    pub op: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub f: ScalarFn,
}

pub const CHECKED_OPS: [&str; 10] = [
    "dense",
    "conv2d",
    "conv_transpose2d",
    "relu",
    "leaky_relu",
    "tanh",
    "sigmoid",
    "batchnorm",
    "bce_with_logits",
    "softmax_cross_entropy",
];

fn randn(shape: &[usize], rng: &mut SeededRng) -> Tensor<f64> {
    Tensor::from_vec(normal_vec(shape.iter().product(), rng), shape).expect("shape")
}

/// Normal draws kept at least `gap` away from zero, so kinks stay out of the
/// finite-difference stencil.
fn randn_off_zero(shape: &[usize], gap: f64, rng: &mut SeededRng) -> Tensor<f64> {
    let data = (0..shape.iter().product::<usize>())
        .map(|_| loop {
            let v: f64 = normal_vec::<f64>(1, rng)[0];
            if v.abs() > gap {
                break v;
            }
        })
        .collect();
    Tensor::from_vec(data, shape).expect("shape")
}

/// `Σ op(x) ⊙ r` with a fixed random `r`, turning any op into a scalar.
fn weighted(
    out_shape_of: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>> + 'static,
    r: Tensor<f64>,
) -> ScalarFn {
    Box::new(move |inp| Ok(out_shape_of(inp)?.mul(&r)?.sum()))
}

fn sample_conv_geometry(rng: &mut SeededRng) -> (usize, usize, usize, usize, usize, usize) {
    loop {
        let (k, stride, pad) = (
            rng.random_range(1..=3),
            rng.random_range(1..=2),
            rng.random_range(0..=1),
        );
        let (h, w) = (rng.random_range(2..=6), rng.random_range(2..=6));
        if conv_output_extent(h, k, stride, pad).is_some()
            && conv_output_extent(w, k, stride, pad).is_some()
        {
            return (k, stride, pad, h, w, rng.random_range(0..stride));
        }
    }
}

/// `instances` random cases for each of [`CHECKED_OPS`].
pub fn op_cases(instances: usize, seed: u64) -> Result<Vec<OpCase>> {
    let mut rng = seeded_rng(seed);
    let mut cases = Vec::new();
    for _ in 0..instances {
        let (b, i, o) = (
            rng.random_range(1..=4),
            rng.random_range(1..=6),
            rng.random_range(1..=5),
        );
        let r = randn(&[b, o], &mut rng);
        cases.push(OpCase {
            op: "dense",
            inputs: vec![
                randn(&[b, i], &mut rng),
                randn(&[o, i], &mut rng),
                randn(&[o], &mut rng),
            ],
            f: weighted(|t| t[0].dense(&t[1], Some(&t[2])), r),
        });

        let (k, stride, pad, h, w, _) = sample_conv_geometry(&mut rng);
        let (b, cin, cout) = (
            rng.random_range(1..=2),
            rng.random_range(1..=3),
            rng.random_range(1..=3),
        );
        let (oh, ow) = (
            conv_output_extent(h, k, stride, pad).unwrap(),
            conv_output_extent(w, k, stride, pad).unwrap(),
        );
        let r = randn(&[b, cout, oh, ow], &mut rng);
        cases.push(OpCase {
            op: "conv2d",
            inputs: vec![
                randn(&[b, cin, h, w], &mut rng),
                randn(&[cout, cin, k, k], &mut rng),
            ],
            f: weighted(move |t| conv2d(&t[0], &t[1], stride, pad), r),
        });

        let (k, stride, pad, h, w, out_pad) = loop {
            let g = sample_conv_geometry(&mut rng);
            let (k, stride, pad, h, w, out_pad) = g;
            if conv_transpose_output_extent(h, k, stride, pad, out_pad).is_some()
                && conv_transpose_output_extent(w, k, stride, pad, out_pad).is_some()
            {
                break g;
            }
        };
        let (b, cin, cout) = (
            rng.random_range(1..=2),
            rng.random_range(1..=3),
            rng.random_range(1..=3),
        );
        let x = randn(&[b, cin, h, w], &mut rng);
        let kt = randn(&[cin, cout, k, k], &mut rng);
        let out_shape = conv_transpose2d(&x, &kt, stride, pad, out_pad)?
            .shape()
            .to_vec();
        let r = randn(&out_shape, &mut rng);
        cases.push(OpCase {
            op: "conv_transpose2d",
            inputs: vec![x, kt],
            f: weighted(
                move |t| conv_transpose2d(&t[0], &t[1], stride, pad, out_pad),
                r,
            ),
        });

        let n = rng.random_range(1..=12);
        let r = randn(&[n], &mut rng);
        cases.push(OpCase {
            op: "relu",
            inputs: vec![randn_off_zero(&[n], 1e-3, &mut rng)],
            f: weighted(|t| Ok(t[0].relu()), r),
        });
        let r = randn(&[n], &mut rng);
        let slope = rng.random_range(0.05..0.5);
        cases.push(OpCase {
            op: "leaky_relu",
            inputs: vec![randn_off_zero(&[n], 1e-3, &mut rng)],
            f: weighted(move |t| Ok(t[0].leaky_relu(slope)), r),
        });
        let r = randn(&[n], &mut rng);
        cases.push(OpCase {
            op: "tanh",
            inputs: vec![randn(&[n], &mut rng).scale(2.0)],
            f: weighted(|t| Ok(t[0].tanh()), r),
        });
        let r = randn(&[n], &mut rng);
        cases.push(OpCase {
            op: "sigmoid",
            inputs: vec![randn(&[n], &mut rng).scale(3.0)],
            f: weighted(|t| Ok(t[0].sigmoid()), r),
        });

        let (b, c, h, w) = (
            rng.random_range(2..=4),
            rng.random_range(1..=3),
            rng.random_range(1..=3),
            rng.random_range(1..=3),
        );
        let r = randn(&[b, c, h, w], &mut rng);
        cases.push(OpCase {
            op: "batchnorm",
            inputs: vec![
                randn(&[b, c, h, w], &mut rng),
                randn(&[c], &mut rng),
                randn(&[c], &mut rng),
            ],
            f: weighted(
                move |t| batchnorm2d(&t[0], &t[1], &t[2], &mut RunningStats::new(c), Mode::Train),
                r,
            ),
        });

        let n = rng.random_range(1..=8);
        let targets: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        cases.push(OpCase {
            op: "bce_with_logits",
            inputs: vec![
                randn(&[n, 1], &mut rng).scale(3.0),
                Tensor::from_vec(targets, &[n, 1])?,
            ],
            f: Box::new(|t| bce_with_logits(&t[0], &t[1])),
        });

        let (b, k) = (rng.random_range(1..=5), rng.random_range(2..=4));
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
        cases.push(OpCase {
            op: "softmax_cross_entropy",
            inputs: vec![randn(&[b, k], &mut rng).scale(2.0)],
            f: Box::new(move |t| softmax_cross_entropy(&t[0], &labels)),
        });
    }
    Ok(cases)
}

/// Runs every case and reports the worst error per op, in first-seen order.
pub fn check_cases(cases: Vec<OpCase>, tolerance: f64) -> Result<Vec<Check>> {
    let mut worst: Vec<(&'static str, f64, usize)> = Vec::new();
    for mut case in cases {
        let err = gradient_error(&mut case.f, &case.inputs, FD_STEP)?;
        match worst.iter_mut().find(|w| w.0 == case.op) {
            Some(w) => {
                w.1 = w.1.max(err);
                w.2 += 1;
            }
            None => worst.push((case.op, err, 1)),
        }
    }
    Ok(worst
        .into_iter()
        .map(|(op, err, n)| {
            let mut check = Check::within(format!("gradient {op}"), err, tolerance);
            check.detail = format!("{n} instances, {}", check.detail);
            check
        })
        .collect())
}

/// Singular values, largest first, by one-sided Jacobi rotations.
pub fn singular_values(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    assert_eq!(a.len(), rows * cols);
    // Orthogonalize the columns of whichever orientation has fewer of them.
    let (m, n, col): (usize, usize, Vec<Vec<f64>>) = if cols <= rows {
        (
            rows,
            cols,
            (0..cols)
                .map(|j| (0..rows).map(|i| a[i * cols + j]).collect())
                .collect(),
        )
    } else {
        (
            cols,
            rows,
            (0..rows)
                .map(|i| a[i * cols..(i + 1) * cols].to_vec())
                .collect(),
        )
    };
    let mut col = col;
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = (0..m).fold((0.0, 0.0, 0.0), |(a, b, g), i| {
                    (
                        a + col[p][i] * col[p][i],
                        b + col[q][i] * col[q][i],
                        g + col[p][i] * col[q][i],
                    )
                });
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = col.split_at_mut(q);
                for (xp, xq) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                    (*xp, *xq) = (c * *xp - s * *xq, s * *xp + c * *xq);
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = col
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Worst relative gap between 50-step power iteration and the SVD oracle
/// over `count` Gaussian matrices, the first 64×576 and the rest of random
/// size up to that.
pub fn spectral_error(count: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded_rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let (rows, cols) = if i == 0 {
            (64, 576)
        } else {
            (rng.random_range(1..=64), rng.random_range(1..=576))
        };
        let w: Vec<f64> = normal_vec(rows * cols, &mut rng);
        let u0: Vec<f64> = normal_vec(rows, &mut rng);
        let est = power_iteration(&w, rows, cols, &u0, SPECTRAL_ITERATIONS).sigma;
        let exact = singular_values(&w, rows, cols)[0];
        worst = worst.max((est - exact).abs() / exact);
    }
    Ok(worst)
}

/// Worst relative violation of `<conv2d(x,k), y> = <x, conv_transpose2d_to(y,k)>
/// = <k, conv2d_kernel_grad(x,y)>` over random geometries.
pub fn adjoint_error(instances: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded_rng(seed);
    let dot = |a: &Tensor<f64>, b: &Tensor<f64>| {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| x * y)
            .sum::<f64>()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (k, stride, pad, h, w, _) = sample_conv_geometry(&mut rng);
        let (b, cin, cout) = (
            rng.random_range(1..=3),
            rng.random_range(1..=4),
            rng.random_range(1..=4),
        );
        let x = randn(&[b, cin, h, w], &mut rng);
        let kern = randn(&[cout, cin, k, k], &mut rng);
        let y_shape = conv2d(&x, &kern, stride, pad)?.shape().to_vec();
        let y = randn(&y_shape, &mut rng);
        let lhs = dot(&conv2d(&x, &kern, stride, pad)?, &y);
        let via_x = dot(&x, &conv_transpose2d_to(&y, &kern, stride, pad, (h, w))?);
        let via_k = dot(&kern, &conv2d_kernel_grad(&x, &y, stride, pad, (k, k))?);
        let scale = lhs.abs().max(1.0);
        worst = worst
            .max((lhs - via_x).abs() / scale)
            .max((lhs - via_k).abs() / scale);
    }
    Ok(worst)
}

/// Parameter-gradient error of the gradient penalty for two small
/// discriminators: dense→leaky ReLU→dense, and conv→leaky ReLU→dense.
pub fn penalty_gradient_error(seed: u64) -> Result<f64> {
    let mut rng = seeded_rng(seed);
    let eps: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();

    let x_real = randn(&[3, 4], &mut rng);
    let x_fake = randn(&[3, 4], &mut rng);
    let params = vec![
        randn(&[5, 4], &mut rng),
        randn(&[5], &mut rng),
        randn(&[1, 5], &mut rng),
    ];
    let e = eps.clone();
    let mut dense_toy = move |p: &[Tensor<f64>]| {
        gradient_penalty_with(
            |x| {
                x.dense(&p[0], Some(&p[1]))?
                    .leaky_relu(0.2)
                    .dense(&p[2], None)
            },
            &x_real,
            &x_fake,
            &e,
        )
    };
    let dense_err = gradient_error(&mut dense_toy, &params, FD_STEP)?;

    let x_real = randn(&[3, 2, 5, 5], &mut rng);
    let x_fake = randn(&[3, 2, 5, 5], &mut rng);
    let params = vec![randn(&[3, 2, 3, 3], &mut rng), randn(&[1, 27], &mut rng)];
    let mut conv_toy = move |p: &[Tensor<f64>]| {
        gradient_penalty_with(
            |x| {
                conv2d(x, &p[0], 2, 1)?
                    .leaky_relu(0.2)
                    .flatten()?
                    .dense(&p[1], None)
            },
            &x_real,
            &x_fake,
            &eps,
        )
    };
    let conv_err = gradient_error(&mut conv_toy, &params, FD_STEP)?;
    Ok(dense_err.max(conv_err))
}

/// Penalty of the linear maps `x ↦ e₁·x` and `x ↦ 3e₁·x`, expected 0 and 4.
pub fn linear_penalties() -> Result<(f64, f64)> {
    let mut rng = seeded_rng(11);
    let x_real = randn(&[4, 3], &mut rng);
    let x_fake = randn(&[4, 3], &mut rng);
    let eps = [0.1, 0.4, 0.7, 1.0];
    let mut out = [0.0; 2];
    for (slot, scale) in out.iter_mut().zip([1.0, 3.0]) {
        let w = Tensor::from_vec(vec![scale, 0.0, 0.0], &[1, 3])?;
        *slot = gradient_penalty_with(|x| x.dense(&w, None), &x_real, &x_fake, &eps)?.item()?;
    }
    Ok((out[0], out[1]))
}

/// One published results column, in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PublishedColumn {
    pub name: &'static str,
    pub accuracy: f64,
    pub bac: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
}

pub const PUBLISHED: [PublishedColumn; 3] = [
    PublishedColumn {
        name: "cGAN_1",
        accuracy: 86.68,
        bac: 81.15,
        precision: 81.94,
        recall: 68.29,
        specificity: 94.00,
        f1: 74.50,
    },
    PublishedColumn {
        name: "cGAN_2",
        accuracy: 87.45,
        bac: 83.19,
        precision: 80.85,
        recall: 73.29,
        specificity: 93.09,
        f1: 76.88,
    },
    PublishedColumn {
        name: "cGAN_4",
        accuracy: 88.33,
        bac: 83.54,
        precision: 84.39,
        recall: 72.41,
        specificity: 94.66,
        f1: 77.94,
    },
];

pub const PUBLIC_IDC_PATCHES: usize = 78_786;
pub const PUBLIC_TOTAL_PATCHES: usize = 277_524;

/// Tolerances (percentage points) for recomputed F1, BAC and accuracy.
pub const TABLE_F1_TOLERANCE: f64 = 0.01;
pub const TABLE_BAC_TOLERANCE: f64 = 0.01;
pub const TABLE_ACCURACY_TOLERANCE: f64 = 0.15;

/// `|recomputed − published|` in percentage points for F1, BAC and accuracy.
pub fn published_deviations(col: &PublishedColumn) -> (f64, f64, f64) {
    let prevalence = PUBLIC_IDC_PATCHES as f64 / PUBLIC_TOTAL_PATCHES as f64;
    let f1 = f1_score(col.precision, col.recall).unwrap_or(f64::NAN);
    let bac = balanced_accuracy(col.recall, col.specificity);
    let acc = accuracy_at_prevalence(prevalence, col.recall, col.specificity);
    (
        (f1 - col.f1).abs(),
        (bac - col.bac).abs(),
        (acc - col.accuracy).abs(),
    )
}

pub fn published_checks() -> Vec<Check> {
    PUBLISHED
        .iter()
        .map(|col| {
            let (f1, bac, acc) = published_deviations(col);
            Check {
                name: format!("published {} identities", col.name),
                passed: f1 <= TABLE_F1_TOLERANCE
                    && bac <= TABLE_BAC_TOLERANCE
                    && acc <= TABLE_ACCURACY_TOLERANCE,
                detail: format!(
                    "F1 off by {f1:.4} pp, BAC by {bac:.4} pp, accuracy by {acc:.4} pp"
                ),
            }
        })
        .collect()
}

/// The full battery behind the `verify` command.
pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    let mut checks = check_cases(op_cases(20, seed)?, GRADIENT_TOLERANCE)?;
    checks.push(Check::within(
        "adjointness conv2d/conv_transpose2d/kernel_grad",
        adjoint_error(50, seed)?,
        ADJOINT_TOLERANCE,
    ));
    checks.push(Check::within(
        "penalty double backward",
        penalty_gradient_error(seed)?,
        PENALTY_TOLERANCE,
    ));
    let (unit, three) = linear_penalties()?;
    checks.push(Check {
        name: "penalty of linear maps".into(),
        passed: unit == 0.0 && (three - 4.0).abs() <= 1e-5,
        detail: format!("norm 1 → {unit:e}, norm 3 → {three}"),
    });
    checks.push(Check::within(
        "power iteration vs SVD",
        spectral_error(100, seed)?,
        SPECTRAL_TOLERANCE,
    ));
    checks.extend(published_checks());
    Ok(checks)
}
