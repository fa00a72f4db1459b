use super::{Mode, Scalar, Tensor};
use crate::error::{Error, Result};

pub const BATCHNORM_EPS: f64 = 1e-5;

/// Per-channel running statistics, updated only in train mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub momentum: f64,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            momentum: 0.1,
        }
    }
}

/// Batch normalization over every axis except 1.
pub fn batchnorm2d<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut RunningStats<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    if x.rank() < 2 {
        return Err(Error::Rank {
            op: "batchnorm2d",
            expected: 4,
            got: x.shape().to_vec(),
        });
    }
    let shape = x.shape().to_vec();
    let channels = shape[1];
    if gamma.shape() != [channels] || beta.shape() != [channels] || stats.mean.len() != channels {
        return Err(Error::shape("batchnorm2d", &shape, gamma.shape()));
    }
    let per_channel = x.numel() / channels;
    let (centered, std) = match mode {
        Mode::Train => {
            if shape[0] < 2 {
                return Err(Error::DegenerateBatch(shape[0]));
            }
            let n = per_channel as f64;
            let mean = x.sum_keep_axis(1)?.scale(1.0 / n);
            let centered = x.sub(&mean.broadcast_axis(1, &shape)?)?;
            let var = centered.square().sum_keep_axis(1)?.scale(1.0 / n);
            let m = T::of(stats.momentum);
            let unbias = T::of(n / (n - 1.0));
            for c in 0..channels {
                stats.mean[c] = (T::one() - m) * stats.mean[c] + m * mean.data()[c];
                stats.var[c] = (T::one() - m) * stats.var[c] + m * var.data()[c] * unbias;
            }
            (centered, var.add_scalar(BATCHNORM_EPS).sqrt())
        }
        Mode::Eval => {
            let mean = Tensor::from_vec(stats.mean.clone(), &[channels])?;
            let centered = x.sub(&mean.broadcast_axis(1, &shape)?)?;
            let std = Tensor::from_vec(stats.var.clone(), &[channels])?
                .add_scalar(BATCHNORM_EPS)
                .sqrt();
            (centered, std)
        }
    };
    let normalized = centered.div(&std.broadcast_axis(1, &shape)?)?;
    normalized
        .mul(&gamma.broadcast_axis(1, &shape)?)?
        .add(&beta.broadcast_axis(1, &shape)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_standardization() {
        let x = Tensor::<f64>::from_vec(vec![1.0, 3.0], &[2, 1, 1, 1]).unwrap();
        let mut stats = RunningStats::new(1);
        let y = batchnorm2d(
            &x,
            &Tensor::ones(&[1]),
            &Tensor::zeros(&[1]),
            &mut stats,
            Mode::Train,
        )
        .unwrap();
        // eps keeps the result a hair inside ±1
        assert!((y.data()[0] + 1.0).abs() < 1e-5 && (y.data()[1] - 1.0).abs() < 1e-5);
        assert!((stats.mean[0] - 0.2).abs() < 1e-12);
        assert!((stats.var[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_gamma_yields_beta() {
        let x = Tensor::<f64>::from_vec(vec![1.0, 5.0, -2.0, 0.5], &[2, 2, 1, 1]).unwrap();
        let beta = Tensor::from_vec(vec![0.25, -1.0], &[2]).unwrap();
        let y = batchnorm2d(
            &x,
            &Tensor::zeros(&[2]),
            &beta,
            &mut RunningStats::new(2),
            Mode::Train,
        )
        .unwrap();
        assert_eq!(y.data(), &[0.25, -1.0, 0.25, -1.0]);
    }

    #[test]
    fn batch_of_one_in_train_mode_is_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 2, 3, 3]);
        let res = batchnorm2d(
            &x,
            &Tensor::ones(&[2]),
            &Tensor::zeros(&[2]),
            &mut RunningStats::new(2),
            Mode::Train,
        );
        assert!(matches!(res, Err(Error::DegenerateBatch(1))));
        let eval = batchnorm2d(
            &x,
            &Tensor::ones(&[2]),
            &Tensor::zeros(&[2]),
            &mut RunningStats::new(2),
            Mode::Eval,
        );
        assert!(eval.is_ok());
    }

    #[test]
    fn eval_mode_leaves_stats_alone() {
        let x = Tensor::<f64>::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[2, 1, 2, 1]).unwrap();
        let mut stats = RunningStats::new(1);
        let before = stats.clone();
        batchnorm2d(
            &x,
            &Tensor::ones(&[1]),
            &Tensor::zeros(&[1]),
            &mut stats,
            Mode::Eval,
        )
        .unwrap();
        assert_eq!(stats, before);
    }
}
