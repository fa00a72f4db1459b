use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const ADAM_BETA1: f64 = 0.5;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias-corrected moments. Moments are allocated on the first step.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            lr,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// `θ ← θ − lr·m̂/(√v̂ + ε)` for every parameter, replacing each with a fresh leaf.
    pub fn update(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("adam", &[params.len()], &[grads.len()]));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape("adam", p.shape(), g.shape()));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len()
            || self
                .m
                .iter()
                .zip(&params)
                .any(|(m, p)| m.len() != p.numel())
        {
            return Err(Error::Config(
                "optimizer state does not match the parameter list".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let mut data = p.to_vec();
            for (((theta, &gi), mi), vi) in data
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let gi = gi.f64();
                let m_new = self.beta1 * mi.f64() + (1.0 - self.beta1) * gi;
                let v_new = self.beta2 * vi.f64() + (1.0 - self.beta2) * gi * gi;
                *mi = T::of(m_new);
                *vi = T::of(v_new);
                let m_hat = m_new / c1;
                let v_hat = v_new / c2;
                *theta = T::of(theta.f64() - self.lr * m_hat / (v_hat.sqrt() + self.eps));
            }
            *p = Tensor::param(data, p.shape())?;
        }
        Ok(())
    }
}

/// Functional form of [`Adam::update`].
pub fn adam_step<T: Scalar>(
    params: Vec<&mut Tensor<T>>,
    grads: &[Tensor<T>],
    state: &mut Adam<T>,
) -> Result<()> {
    state.update(params, grads)
}
