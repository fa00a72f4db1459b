//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! Every operation on a tracked input records a node holding its inputs and a
//! generation number one above the deepest input. Backward passes visit nodes
//! in decreasing generation order, so each node runs after all of its
//! consumers. Backward rules are themselves written with tensor operations;
//! running them with `create_graph = true` records a second graph, which is
//! what the gradient penalty differentiates through.

mod autograd;
mod conv;
mod gemm;
mod loss;
mod norm;
mod ops;
mod scalar;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub use autograd::{grad, grad_allow_unused, grad_enabled, input_gradient, no_grad, GradModeGuard};
pub use conv::{
    conv2d, conv2d_kernel_grad, conv_output_extent, conv_transpose2d, conv_transpose2d_to,
    conv_transpose_output_extent,
};
pub use loss::{bce_with_logits, softmax_cross_entropy};
pub use norm::{batchnorm2d, RunningStats};
pub use ops::Activation;
pub use scalar::{DType, Scalar};

pub(crate) use gemm::{gemm, MatRef};
pub(crate) use ops::Op;

/// Train/eval switch shared by every stateful layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) struct Node<T: Scalar> {
    pub op: Op,
    pub inputs: Vec<Tensor<T>>,
    pub generation: u64,
}

struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    node: Option<Node<T>>,
    grad: Mutex<Option<Tensor<T>>>,
}

/// An n-dimensional array, cheap to clone (shared storage).
pub struct Tensor<T: Scalar = f32> {
    inner: Arc<Inner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.inner.shape);
        if self.numel() <= 16 {
            s.field("data", &self.inner.data);
        }
        if let Some(node) = &self.inner.node {
            s.field("op", &node.op.name());
        }
        s.field("requires_grad", &self.inner.requires_grad).finish()
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn build(data: Vec<T>, shape: Vec<usize>, requires_grad: bool, node: Option<Node<T>>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                node,
                grad: Mutex::new(None),
            }),
        }
    }

    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if numel_of(shape) != data.len() {
            return Err(Error::shape("from_vec", shape, &[data.len()]));
        }
        Ok(Self::build(data, shape.to_vec(), false, None))
    }

    /// A leaf that accumulates gradients.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if numel_of(shape) != data.len() {
            return Err(Error::shape("param", shape, &[data.len()]));
        }
        Ok(Self::build(data, shape.to_vec(), true, None))
    }

    pub fn from_f64(data: &[f64], shape: &[usize]) -> Result<Self> {
        Self::from_vec(data.iter().map(|&v| T::of(v)).collect(), shape)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::build(vec![value; numel_of(shape)], shape.to_vec(), false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::build(vec![value], Vec::new(), false, None)
    }

    /// Result of an operation; records a graph node when grad mode is on and
    /// any input is tracked.
    pub(crate) fn from_op(data: Vec<T>, shape: Vec<usize>, op: Op, inputs: &[&Tensor<T>]) -> Self {
        if grad_enabled() && inputs.iter().any(|t| t.is_tracked()) {
            let generation = inputs.iter().map(|t| t.generation()).max().unwrap_or(0) + 1;
            let node = Node {
                op,
                inputs: inputs.iter().map(|&t| t.clone()).collect(),
                generation,
            };
            Self::build(data, shape, true, Some(node))
        } else {
            Self::build(data, shape, false, None)
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.inner.data.iter().map(|v| v.f64()).collect()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::Rank {
                op: "item",
                expected: 0,
                got: self.shape().to_vec(),
            });
        }
        Ok(self.inner.data[0])
    }

    /// Tracked either as a gradient-requiring leaf or as the output of a recorded op.
    pub fn is_tracked(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.node.is_none()
    }

    pub(crate) fn node(&self) -> Option<&Node<T>> {
        self.inner.node.as_ref()
    }

    pub(crate) fn generation(&self) -> u64 {
        self.inner.node.as_ref().map_or(0, |n| n.generation)
    }

    /// Name of the operation that produced this tensor, if recorded.
    pub fn op_name(&self) -> Option<&'static str> {
        self.inner.node.as_ref().map(|n| n.op.name())
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::build(
            self.inner.data.clone(),
            self.inner.shape.clone(),
            false,
            None,
        )
    }

    /// Copy of the values as a fresh gradient-requiring leaf.
    pub fn to_param(&self) -> Self {
        Self::build(
            self.inner.data.clone(),
            self.inner.shape.clone(),
            true,
            None,
        )
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.inner.grad.lock().unwrap().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().unwrap() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: Tensor<T>) -> Result<()> {
        let mut slot = self.inner.grad.lock().unwrap();
        let next = match slot.take() {
            Some(prev) => prev.add(&g)?,
            None => g,
        };
        *slot = Some(next);
        Ok(())
    }

    /// `[b, c, h, w]` extents of a rank-4 tensor.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match *self.shape() {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(Error::Rank {
                op,
                expected: 4,
                got: self.shape().to_vec(),
            }),
        }
    }

    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match *self.shape() {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Rank {
                op,
                expected: 2,
                got: self.shape().to_vec(),
            }),
        }
    }

    /// Converts element type; the result is an untracked copy.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::build(
            self.inner.data.iter().map(|v| U::of(v.f64())).collect(),
            self.inner.shape.clone(),
            false,
            None,
        )
    }
}
