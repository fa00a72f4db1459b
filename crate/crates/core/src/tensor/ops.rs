use super::{conv, gemm, MatRef, Scalar, Tensor};
use crate::error::{Error, Result};

/// Recorded operation. Backward rules are expressed with tensor operations so
/// that they can themselves be recorded.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(f64),
    AddScalar,
    Exp,
    Log,
    Sqrt,
    Square,
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    SumAll,
    Expand,
    SumKeepAxis(usize),
    BroadcastAxis(usize),
    MatMul { ta: bool, tb: bool },
    Reshape,
    Concat { axis: usize },
    Narrow { axis: usize, start: usize },
    PadAxis { axis: usize, before: usize },
    Conv2d { stride: usize, pad: usize },
    ConvTranspose2d { stride: usize, pad: usize },
    ConvKernelGrad { stride: usize, pad: usize },
    BceLogits,
}

/// Elementwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    /// Negative-side slope in (0, 1). The derivative at exactly 0 is the slope.
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::AddScalar => "add_scalar",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Sqrt => "sqrt",
            Op::Square => "square",
            Op::Relu => "relu",
            Op::LeakyRelu(_) => "leaky_relu",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::SumAll => "sum",
            Op::Expand => "expand",
            Op::SumKeepAxis(_) => "sum_keep_axis",
            Op::BroadcastAxis(_) => "broadcast_axis",
            Op::MatMul { .. } => "matmul",
            Op::Reshape => "reshape",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
            Op::PadAxis { .. } => "pad_axis",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::ConvKernelGrad { .. } => "conv2d_kernel_grad",
            Op::BceLogits => "bce_with_logits",
        }
    }

    pub fn backward<T: Scalar>(
        &self,
        inputs: &[Tensor<T>],
        out: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let x = &inputs[0];
        let one = |t: Result<Tensor<T>>| -> Result<Vec<Option<Tensor<T>>>> { Ok(vec![Some(t?)]) };
        let want = |i: usize| needs.get(i).copied().unwrap_or(false);
        match self {
            Op::Add => Ok(vec![Some(g.clone()), Some(g.clone())]),
            Op::Sub => Ok(vec![Some(g.clone()), Some(g.neg())]),
            Op::Mul => Ok(vec![
                want(0).then(|| g.mul(&inputs[1])).transpose()?,
                want(1).then(|| g.mul(x)).transpose()?,
            ]),
            Op::Div => {
                let b = &inputs[1];
                Ok(vec![
                    want(0).then(|| g.div(b)).transpose()?,
                    want(1)
                        .then(|| g.mul(out)?.div(b).map(|t| t.neg()))
                        .transpose()?,
                ])
            }
            Op::Neg => one(Ok(g.neg())),
            Op::Scale(c) => one(Ok(g.scale(*c))),
            Op::AddScalar => one(Ok(g.clone())),
            Op::Exp => one(g.mul(out)),
            Op::Log => one(g.div(x)),
            Op::Sqrt => one(g.div(&out.scale(2.0))),
            Op::Square => one(g.mul(&x.scale(2.0))),
            Op::Relu => one(g.mul(&x.mask(|v| if v > T::zero() { T::one() } else { T::zero() }))),
            Op::LeakyRelu(slope) => {
                let s = T::of(*slope);
                one(g.mul(&x.mask(|v| if v > T::zero() { T::one() } else { s })))
            }
            Op::Tanh => one(g.mul(&out.square().neg().add_scalar(1.0))),
            Op::Sigmoid => one(g.mul(&out.mul(&out.neg().add_scalar(1.0))?)),
            Op::SumAll => one(g.expand(x.shape())),
            Op::Expand => one(Ok(g.sum())),
            Op::SumKeepAxis(axis) => one(g.broadcast_axis(*axis, x.shape())),
            Op::BroadcastAxis(axis) => one(g.sum_keep_axis(*axis)),
            Op::MatMul { ta, tb } => {
                let (a, b) = (x, &inputs[1]);
                let ga = if want(0) {
                    Some(if *ta {
                        b.matmul_t(g, *tb, true)?
                    } else {
                        g.matmul_t(b, false, !*tb)?
                    })
                } else {
                    None
                };
                let gb = if want(1) {
                    Some(if *tb {
                        g.matmul_t(a, true, *ta)?
                    } else {
                        a.matmul_t(g, !*ta, false)?
                    })
                } else {
                    None
                };
                Ok(vec![ga, gb])
            }
            Op::Reshape => one(g.reshape(x.shape())),
            Op::Concat { axis } => {
                let mut start = 0;
                let mut grads = Vec::with_capacity(inputs.len());
                for (i, input) in inputs.iter().enumerate() {
                    let len = input.shape()[*axis];
                    grads.push(want(i).then(|| g.narrow(*axis, start, len)).transpose()?);
                    start += len;
                }
                Ok(grads)
            }
            Op::Narrow { axis, start } => one(g.pad_axis(*axis, *start, x.shape()[*axis])),
            Op::PadAxis { axis, before } => one(g.narrow(*axis, *before, x.shape()[*axis])),
            Op::Conv2d { stride, pad } => {
                let k = &inputs[1];
                let (_, _, h, w) = x.dims4("conv2d")?;
                Ok(vec![
                    want(0)
                        .then(|| conv::conv_transpose2d_to(g, k, *stride, *pad, (h, w)))
                        .transpose()?,
                    want(1)
                        .then(|| conv::conv2d_kernel_grad(x, g, *stride, *pad, kernel_hw(k)))
                        .transpose()?,
                ])
            }
            Op::ConvTranspose2d { stride, pad } => {
                // out = convᵀ(y, k): its adjoint in y is conv2d with the same kernel.
                let k = &inputs[1];
                Ok(vec![
                    want(0)
                        .then(|| conv::conv2d(g, k, *stride, *pad))
                        .transpose()?,
                    want(1)
                        .then(|| conv::conv2d_kernel_grad(g, x, *stride, *pad, kernel_hw(k)))
                        .transpose()?,
                ])
            }
            Op::ConvKernelGrad { stride, pad } => {
                // out = K(x, gy) with <K, G> = <conv2d(x, G), gy>.
                let gy = &inputs[1];
                let (_, _, h, w) = x.dims4("conv2d_kernel_grad")?;
                Ok(vec![
                    want(0)
                        .then(|| conv::conv_transpose2d_to(gy, g, *stride, *pad, (h, w)))
                        .transpose()?,
                    want(1)
                        .then(|| conv::conv2d(x, g, *stride, *pad))
                        .transpose()?,
                ])
            }
            Op::BceLogits => {
                let t = &inputs[1];
                Ok(vec![
                    want(0).then(|| g.mul(&x.sigmoid().sub(t)?)).transpose()?,
                    want(1).then(|| g.mul(&x.neg())).transpose()?,
                ])
            }
        }
    }
}

fn kernel_hw<T: Scalar>(k: &Tensor<T>) -> (usize, usize) {
    let s = k.shape();
    (s[2], s[3])
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Tensor<T> {
    fn unary(&self, op: Op, f: impl Fn(T) -> T) -> Tensor<T> {
        let data = self.data().iter().map(|&v| f(v)).collect();
        Tensor::from_op(data, self.shape().to_vec(), op, &[self])
    }

    fn binary(&self, other: &Tensor<T>, op: Op, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op.name(), self.shape(), other.shape()));
        }
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            op,
            &[self, other],
        ))
    }

    /// Untracked elementwise map, used for constant masks.
    pub(crate) fn mask(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        let data = self.data().iter().map(|&v| f(v)).collect();
        Tensor::from_vec(data, self.shape()).expect("same shape")
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Op::Mul, |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Op::Div, |a, b| a / b)
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary(Op::Neg, |v| -v)
    }

    pub fn scale(&self, c: f64) -> Tensor<T> {
        let s = T::of(c);
        self.unary(Op::Scale(c), |v| v * s)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<T> {
        let s = T::of(c);
        self.unary(Op::AddScalar, |v| v + s)
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary(Op::Exp, |v| v.exp())
    }

    pub fn ln(&self) -> Tensor<T> {
        self.unary(Op::Log, |v| v.ln())
    }

    pub fn sqrt(&self) -> Tensor<T> {
        self.unary(Op::Sqrt, |v| v.sqrt())
    }

    pub fn square(&self) -> Tensor<T> {
        self.unary(Op::Square, |v| v * v)
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary(Op::Relu, |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor<T> {
        let s = T::of(slope);
        self.unary(
            Op::LeakyRelu(slope),
            |v| if v > T::zero() { v } else { v * s },
        )
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary(Op::Tanh, |v| v.tanh())
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(Op::Sigmoid, |v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        })
    }

    pub fn activation(&self, kind: Activation) -> Result<Tensor<T>> {
        Ok(match kind {
            Activation::Identity => self.clone(),
            Activation::Relu => self.relu(),
            Activation::LeakyRelu(slope) => {
                if !(slope > 0.0 && slope < 1.0) {
                    return Err(Error::Config(format!(
                        "leaky_relu slope {slope} outside (0,1)"
                    )));
                }
                self.leaky_relu(slope)
            }
            Activation::Tanh => self.tanh(),
            Activation::Sigmoid => self.sigmoid(),
        })
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&self) -> Tensor<T> {
        let total = self.data().iter().copied().sum();
        Tensor::from_op(vec![total], Vec::new(), Op::SumAll, &[self])
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// Broadcasts a one-element tensor to `shape`.
    pub fn expand(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if self.numel() != 1 {
            return Err(Error::shape("expand", self.shape(), shape));
        }
        let n: usize = shape.iter().product();
        Ok(Tensor::from_op(
            vec![self.data()[0]; n],
            shape.to_vec(),
            Op::Expand,
            &[self],
        ))
    }

    /// Reduces every axis except `axis`, giving a vector of length `shape[axis]`.
    pub fn sum_keep_axis(&self, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() {
            return Err(Error::geometry(
                "sum_keep_axis",
                format!("axis {axis} of shape {:?}", self.shape()),
            ));
        }
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let src = self.data();
        let mut out = vec![T::zero(); len];
        for o in 0..outer {
            for (j, acc) in out.iter_mut().enumerate() {
                let base = (o * len + j) * inner;
                *acc = *acc + src[base..base + inner].iter().copied().sum::<T>();
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![len],
            Op::SumKeepAxis(axis),
            &[self],
        ))
    }

    /// Repeats a vector along every axis of `shape` except `axis`.
    pub fn broadcast_axis(&self, axis: usize, shape: &[usize]) -> Result<Tensor<T>> {
        if axis >= shape.len() || self.shape() != [shape[axis]] {
            return Err(Error::shape("broadcast_axis", self.shape(), shape));
        }
        let (outer, len, inner) = axis_split(shape, axis);
        let src = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for _ in 0..outer {
            for &v in src.iter().take(len) {
                out.extend(std::iter::repeat_n(v, inner));
            }
        }
        Ok(Tensor::from_op(
            out,
            shape.to_vec(),
            Op::BroadcastAxis(axis),
            &[self],
        ))
    }

    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.matmul_t(other, false, false)
    }

    /// `op(self) · op(other)` where `op` transposes when the flag is set.
    pub fn matmul_t(&self, other: &Tensor<T>, ta: bool, tb: bool) -> Result<Tensor<T>> {
        let (ar, ac) = self.dims2("matmul")?;
        let (br, bc) = other.dims2("matmul")?;
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(), other.shape()));
        }
        let a = if ta {
            MatRef::transposed(self.data(), ac)
        } else {
            MatRef::row_major(self.data(), ac)
        };
        let b = if tb {
            MatRef::transposed(other.data(), bc)
        } else {
            MatRef::row_major(other.data(), bc)
        };
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, a, b, &mut out);
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            Op::MatMul { ta, tb },
            &[self, other],
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            Op::Reshape,
            &[self],
        ))
    }

    /// `[b, ...] → [b, rest]`.
    pub fn flatten(&self) -> Result<Tensor<T>> {
        let b = *self.shape().first().unwrap_or(&1);
        self.reshape(&[b, self.numel() / b.max(1)])
    }

    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::geometry("concat", "no inputs"))?;
        if axis >= first.rank() {
            return Err(Error::geometry(
                "concat",
                format!("axis {axis} of shape {:?}", first.shape()),
            ));
        }
        for p in parts {
            let compatible = p.rank() == first.rank()
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", first.shape(), p.shape()));
            }
        }
        let (outer, _, inner) = axis_split(first.shape(), axis);
        let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let block = p.shape()[axis] * inner;
                out.extend_from_slice(&p.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(out, shape, Op::Concat { axis }, parts))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() || start + len > self.shape()[axis] {
            return Err(Error::geometry(
                "narrow",
                format!(
                    "[{start}, {}) on axis {axis} of {:?}",
                    start + len,
                    self.shape()
                ),
            ));
        }
        let (outer, full, inner) = axis_split(self.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(
            out,
            shape,
            Op::Narrow { axis, start },
            &[self],
        ))
    }

    /// Embeds `self` at offset `before` in a zero tensor of extent `total` along `axis`.
    pub(crate) fn pad_axis(&self, axis: usize, before: usize, total: usize) -> Result<Tensor<T>> {
        let (outer, len, inner) = axis_split(self.shape(), axis);
        if before + len > total {
            return Err(Error::geometry(
                "pad_axis",
                format!("{before}+{len} > {total}"),
            ));
        }
        let mut out = vec![T::zero(); outer * total * inner];
        for o in 0..outer {
            let dst = (o * total + before) * inner;
            out[dst..dst + len * inner]
                .copy_from_slice(&self.data()[o * len * inner..(o + 1) * len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(
            out,
            shape,
            Op::PadAxis { axis, before },
            &[self],
        ))
    }

    /// `x·wᵀ + b` for `x: [batch, in]`, `w: [out, in]`, `b: [out]`.
    pub fn dense(&self, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let (_, xin) = self.dims2("dense")?;
        let (_, win) = w.dims2("dense")?;
        if xin != win {
            return Err(Error::shape("dense", self.shape(), w.shape()));
        }
        let y = self.matmul_t(w, false, true)?;
        match b {
            Some(b) => y.add(&b.broadcast_axis(1, y.shape())?),
            None => Ok(y),
        }
    }

    /// Adds a per-channel bias (axis 1).
    pub fn add_channel_bias(&self, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.add(&b.broadcast_axis(1, self.shape())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(vals: &[f64], shape: &[usize]) -> Tensor<f64> {
        Tensor::from_vec(vals.to_vec(), shape).unwrap()
    }

    #[test]
    fn dense_examples() {
        let y = t(&[1.0, 2.0], &[1, 2])
            .dense(
                &t(&[1.0, 0.0, 0.0, 1.0], &[2, 2]),
                Some(&t(&[0.0, 0.0], &[2])),
            )
            .unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
        let y = t(&[1.0, 1.0], &[1, 2])
            .dense(&t(&[2.0, 3.0], &[1, 2]), Some(&t(&[1.0], &[1])))
            .unwrap();
        assert_eq!(y.data(), &[6.0]);
    }

    #[test]
    fn dense_shape_error_names_both_shapes() {
        let err = t(&[1.0, 2.0, 3.0], &[1, 3])
            .dense(&t(&[1.0, 2.0], &[1, 2]), None)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 3]") && msg.contains("[1, 2]"), "{msg}");
    }

    #[test]
    fn activation_examples() {
        let x = t(&[-1.0, -3.0, 3.0, 0.0], &[4]);
        assert_eq!(x.leaky_relu(0.2).data()[0], -0.2);
        assert_eq!(&x.relu().data()[1..3], &[0.0, 3.0]);
        assert_eq!(x.tanh().data()[3], 0.0);
        assert_eq!(x.sigmoid().data()[3], 0.5);
        assert!(x.activation(Activation::LeakyRelu(1.5)).is_err());
    }

    #[test]
    fn leaky_relu_derivative_at_zero_is_slope() {
        let x = Tensor::<f64>::param(vec![0.0, 1.0, -1.0], &[3]).unwrap();
        x.leaky_relu(0.2).sum().backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[0.2, 1.0, 0.2]);
    }

    #[test]
    fn axis_reductions_are_adjoint() {
        let x = t(&(0..24).map(f64::from).collect::<Vec<_>>(), &[2, 3, 4]);
        let s = x.sum_keep_axis(1).unwrap();
        assert_eq!(s.data(), &[60.0, 92.0, 124.0]);
        let v = t(&[1.0, 2.0, 3.0], &[3]);
        let b = v.broadcast_axis(1, &[2, 3, 4]).unwrap();
        let lhs: f64 = b.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = s.data().iter().zip(v.data()).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn concat_then_narrow_round_trips() {
        let a = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = t(&[5.0, 6.0], &[2, 1]);
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        assert_eq!(c.narrow(1, 2, 1).unwrap().data(), b.data());
        assert_eq!(
            b.pad_axis(1, 2, 3).unwrap().data(),
            &[0.0, 0.0, 5.0, 0.0, 0.0, 6.0]
        );
    }
}
