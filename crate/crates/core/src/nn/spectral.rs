//! Spectral normalization.
//!
//! A weight is viewed as a matrix with output channels as rows and every other
//! axis flattened into columns. One power-iteration step per training forward
//! refines a persisted left singular vector `u`; the weight is then divided by
//! `σ = uᵀ W v`. `u` and `v` are constants for differentiation, so `σ` is
//! computed as `Σ W ⊙ (u vᵀ)` and the gradient flows only through `W`.

use crate::error::{Error, Result};
use crate::tensor::{Mode, Scalar, Tensor};

use super::init::{normal_vec, SeededRng};

/// Where the output-channel axis sits in a weight tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightLayout {
    /// `[out, ...]`: dense and convolution weights.
    OutFirst,
    /// `[in, out, ...]`: transposed-convolution weights.
    InFirst,
}

impl WeightLayout {
    /// `(rows, cols)` of the matrix view.
    pub fn matrix_dims(self, shape: &[usize]) -> (usize, usize) {
        let numel: usize = shape.iter().product();
        let rows = match self {
            WeightLayout::OutFirst => shape[0],
            WeightLayout::InFirst => shape[1],
        };
        (rows, numel / rows.max(1))
    }

    /// Index in the weight tensor of matrix element `(r, c)`.
    fn index(self, shape: &[usize], r: usize, c: usize) -> usize {
        match self {
            WeightLayout::OutFirst => r * (shape.iter().skip(1).product::<usize>()) + c,
            WeightLayout::InFirst => {
                let inner: usize = shape.iter().skip(2).product();
                let (i, k) = (c / inner, c % inner);
                (i * shape[1] + r) * inner + k
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerIterationResult {
    pub sigma: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// `iters` rounds of `v = norm(Wᵀu)`, `u = norm(Wv)` on a row-major
/// `[rows, cols]` matrix. With `iters == 0` only `v` is derived from `u`.
///
/// A zero matrix yields `σ = 0` and returns `u` unchanged.
pub fn power_iteration<T: Scalar>(
    w: &[T],
    rows: usize,
    cols: usize,
    u: &[T],
    iters: usize,
) -> PowerIterationResult {
    assert_eq!(w.len(), rows * cols);
    assert_eq!(u.len(), rows);
    let mut u: Vec<f64> = u.iter().map(|x| x.f64()).collect();
    let mut v = vec![0.0; cols];
    let wt_u = |u: &[f64], v: &mut [f64]| {
        v.iter_mut().for_each(|x| *x = 0.0);
        for (r, &ur) in u.iter().enumerate() {
            for (vc, &wrc) in v.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                *vc += wrc.f64() * ur;
            }
        }
    };
    let w_v = |v: &[f64]| -> Vec<f64> {
        (0..rows)
            .map(|r| {
                w[r * cols..(r + 1) * cols]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a.f64() * b)
                    .sum()
            })
            .collect()
    };
    let original = u.clone();
    for _ in 0..iters {
        wt_u(&u, &mut v);
        if normalize(&mut v) == 0.0 {
            return PowerIterationResult {
                sigma: 0.0,
                u: original,
                v,
            };
        }
        let mut next = w_v(&v);
        if normalize(&mut next) == 0.0 {
            return PowerIterationResult {
                sigma: 0.0,
                u: original,
                v,
            };
        }
        u = next;
    }
    if iters == 0 {
        wt_u(&u, &mut v);
        if normalize(&mut v) == 0.0 {
            return PowerIterationResult { sigma: 0.0, u, v };
        }
    }
    let sigma = w_v(&v).iter().zip(&u).map(|(a, b)| a * b).sum();
    PowerIterationResult { sigma, u, v }
}

/// Tensor-level power iteration on `w_mat: [rows, cols]` starting from `u: [rows]`.
pub fn spectral_power_iteration<T: Scalar>(
    w_mat: &Tensor<T>,
    u: &Tensor<T>,
    iters: usize,
) -> Result<(T, Tensor<T>)> {
    let (rows, cols) = w_mat.dims2("spectral_power_iteration")?;
    if u.shape() != [rows] {
        return Err(Error::shape(
            "spectral_power_iteration",
            w_mat.shape(),
            u.shape(),
        ));
    }
    if iters == 0 {
        return Err(Error::Config(
            "power iteration needs at least one step".into(),
        ));
    }
    let res = power_iteration(w_mat.data(), rows, cols, u.data(), iters);
    let u = Tensor::from_vec(res.u.iter().map(|&x| T::of(x)).collect(), &[rows])?;
    Ok((T::of(res.sigma), u))
}

/// Persistent power-iteration state of one spectrally normalized weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralNorm<T> {
    pub layout: WeightLayout,
    pub u: Vec<T>,
}

impl<T: Scalar> SpectralNorm<T> {
    pub fn new(shape: &[usize], layout: WeightLayout, rng: &mut SeededRng) -> Self {
        let (rows, _) = layout.matrix_dims(shape);
        let mut u: Vec<f64> = normal_vec(rows, rng);
        normalize(&mut u);
        SpectralNorm {
            layout,
            u: u.into_iter().map(T::of).collect(),
        }
    }

    fn matrix(&self, w: &Tensor<T>) -> (Vec<T>, usize, usize) {
        let shape = w.shape();
        let (rows, cols) = self.layout.matrix_dims(shape);
        if self.layout == WeightLayout::OutFirst {
            return (w.to_vec(), rows, cols);
        }
        let data = w.data();
        let mut m = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                m.push(data[self.layout.index(shape, r, c)]);
            }
        }
        (m, rows, cols)
    }

    /// `W / σ(W)`. Train mode advances `u` by one power-iteration step; eval
    /// mode reuses the stored `u`.
    pub fn normalize_weight(&mut self, w: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (mat, rows, cols) = self.matrix(w);
        let iters = usize::from(mode == Mode::Train);
        let res = power_iteration(&mat, rows, cols, &self.u, iters);
        if res.sigma == 0.0 {
            return Ok(w.clone());
        }
        if mode == Mode::Train {
            self.u = res.u.iter().map(|&x| T::of(x)).collect();
        }
        let shape = w.shape();
        let mut outer = vec![T::zero(); w.numel()];
        for (r, &ur) in res.u.iter().enumerate() {
            for (c, &vc) in res.v.iter().enumerate() {
                outer[self.layout.index(shape, r, c)] = T::of(ur * vc);
            }
        }
        let sigma = w.mul(&Tensor::from_vec(outer, shape)?)?.sum();
        w.div(&sigma.expand(shape)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_rng;

    #[test]
    fn diagonal_converges_to_largest_entry() {
        let w = [2.0f64, 0.0, 0.0, 1.0];
        let res = power_iteration(&w, 2, 2, &[0.6, 0.8], 20);
        assert!((res.sigma - 2.0).abs() < 1e-4);
        let n: f64 = res.u.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-6);
    }

    #[test]
    fn identity_has_unit_sigma() {
        let w: Vec<f64> = (0..9).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect();
        let t = Tensor::from_vec(w, &[3, 3]).unwrap();
        let u = Tensor::from_vec(vec![0.3, -0.5, 0.1], &[3]).unwrap();
        let (sigma, u) = spectral_power_iteration(&t, &u, 1).unwrap();
        assert!((sigma - 1.0).abs() < 1e-12);
        assert!((u.data().iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix_keeps_u() {
        let res = power_iteration(&[0.0f64; 6], 2, 3, &[1.0, 0.0], 5);
        assert_eq!(res.sigma, 0.0);
        assert_eq!(res.u, vec![1.0, 0.0]);
        let mut sn = SpectralNorm {
            layout: WeightLayout::OutFirst,
            u: vec![1.0, 0.0],
        };
        let w = Tensor::<f64>::zeros(&[2, 3]);
        assert_eq!(
            sn.normalize_weight(&w, Mode::Train).unwrap().data(),
            w.data()
        );
        assert_eq!(sn.u, vec![1.0, 0.0]);
    }

    #[test]
    fn normalized_diagonal() {
        let w = Tensor::<f64>::from_vec(vec![2.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        let mut sn = SpectralNorm::new(&[2, 2], WeightLayout::OutFirst, &mut seeded_rng(3));
        let mut out = w.clone();
        for _ in 0..30 {
            out = sn.normalize_weight(&w, Mode::Train).unwrap();
        }
        let want = [1.0, 0.0, 0.0, 0.5];
        for (a, b) in out.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-6, "{:?}", out.data());
        }
    }

    #[test]
    fn eval_mode_does_not_drift() {
        let mut rng = seeded_rng(9);
        let w = Tensor::<f64>::from_vec(normal_vec(12, &mut rng), &[3, 4]).unwrap();
        let mut sn = SpectralNorm::new(&[3, 4], WeightLayout::OutFirst, &mut rng);
        let u0 = sn.u.clone();
        let a = sn.normalize_weight(&w, Mode::Eval).unwrap();
        let b = sn.normalize_weight(&w, Mode::Eval).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(sn.u, u0);
    }

    #[test]
    fn in_first_layout_uses_second_axis_as_rows() {
        let shape = [2, 3, 1, 1];
        assert_eq!(WeightLayout::InFirst.matrix_dims(&shape), (3, 2));
        // element (r = out 1, c = in 1) lives at [1, 1, 0, 0]
        assert_eq!(WeightLayout::InFirst.index(&shape, 1, 1), 4);
    }
}
