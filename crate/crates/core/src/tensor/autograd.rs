use std::cell::Cell;
use std::collections::{HashMap, HashSet};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Gradients keyed by tensor id.
type GradMap<T> = HashMap<u64, Tensor<T>>;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Restores the previous grad mode on drop.
pub struct GradModeGuard {
    prev: bool,
}

impl GradModeGuard {
    pub fn set(enabled: bool) -> Self {
        let prev = GRAD_ENABLED.with(|g| g.replace(enabled));
        GradModeGuard { prev }
    }
}

impl Drop for GradModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

/// Disables graph recording until the guard is dropped.
pub fn no_grad() -> GradModeGuard {
    GradModeGuard::set(false)
}

enum Targets<'a, T: Scalar> {
    /// Every gradient-requiring leaf.
    Leaves,
    Only(&'a [&'a Tensor<T>]),
}

/// Runs the reverse sweep from `root` and returns gradients keyed by tensor id.
///
/// Only nodes from which a target is reachable are differentiated; for
/// `Targets::Only` that skips e.g. discriminator weight gradients when just the
/// input gradient is wanted.
fn run_backward<T: Scalar>(
    root: &Tensor<T>,
    targets: Targets<'_, T>,
    create_graph: bool,
) -> Result<(GradMap<T>, Vec<Tensor<T>>)> {
    if !root.is_tracked() {
        return Err(Error::NotTracked);
    }
    let target_ids: HashSet<u64> = match &targets {
        Targets::Leaves => HashSet::new(),
        Targets::Only(ts) => ts.iter().map(|t| t.id()).collect(),
    };
    let is_target = |t: &Tensor<T>| match targets {
        Targets::Leaves => t.is_leaf() && t.is_tracked(),
        Targets::Only(_) => target_ids.contains(&t.id()),
    };

    // Collect every tracked tensor reachable from the root.
    let mut seen = HashSet::new();
    let mut reachable = Vec::new();
    let mut stack = vec![root.clone()];
    seen.insert(root.id());
    while let Some(t) = stack.pop() {
        if let Some(node) = t.node() {
            for input in &node.inputs {
                if input.is_tracked() && seen.insert(input.id()) {
                    stack.push(input.clone());
                }
            }
        }
        reachable.push(t);
    }
    // Inputs have strictly lower generation than their consumers.
    reachable.sort_by_key(|t| (t.generation(), t.id()));

    let mut relevant: HashMap<u64, bool> = HashMap::with_capacity(reachable.len());
    for t in &reachable {
        let r = is_target(t)
            || t.node().is_some_and(|n| {
                n.inputs
                    .iter()
                    .any(|i| relevant.get(&i.id()).copied().unwrap_or(false))
            });
        relevant.insert(t.id(), r);
    }
    if !relevant[&root.id()] {
        return Err(Error::Disconnected);
    }

    let _mode = GradModeGuard::set(create_graph);
    let mut grads: HashMap<u64, Tensor<T>> = HashMap::new();
    grads.insert(root.id(), Tensor::ones(root.shape()));
    let mut leaves = Vec::new();

    for t in reachable.iter().rev() {
        let Some(node) = t.node() else {
            if is_target(t) {
                leaves.push(t.clone());
            }
            continue;
        };
        let g = if is_target(t) {
            grads.get(&t.id()).cloned()
        } else {
            grads.remove(&t.id())
        };
        let Some(g) = g else { continue };
        let needs: Vec<bool> = node
            .inputs
            .iter()
            .map(|i| relevant.get(&i.id()).copied().unwrap_or(false))
            .collect();
        if !needs.iter().any(|&n| n) {
            continue;
        }
        let input_grads = node.op.backward(&node.inputs, t, &g, &needs)?;
        for ((input, need), ig) in node.inputs.iter().zip(&needs).zip(input_grads) {
            let (true, Some(ig)) = (*need, ig) else {
                continue;
            };
            if ig.shape() != input.shape() {
                return Err(Error::shape(node.op.name(), input.shape(), ig.shape()));
            }
            let merged = match grads.remove(&input.id()) {
                Some(prev) => prev.add(&ig)?,
                None => ig,
            };
            grads.insert(input.id(), merged);
        }
    }
    Ok((grads, leaves))
}

impl<T: Scalar> Tensor<T> {
    /// Accumulates `d self / d leaf` into every gradient-requiring leaf.
    pub fn backward(&self) -> Result<()> {
        self.backward_with(false)
    }

    /// With `create_graph` the accumulated gradients are themselves tracked.
    pub fn backward_with(&self, create_graph: bool) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Rank {
                op: "backward",
                expected: 0,
                got: self.shape().to_vec(),
            });
        }
        let (mut grads, leaves) = run_backward(self, Targets::Leaves, create_graph)?;
        let _mode = GradModeGuard::set(create_graph);
        for leaf in leaves {
            if let Some(g) = grads.remove(&leaf.id()) {
                leaf.accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}

/// Gradients of a scalar `output` with respect to each of `inputs`, without
/// touching any leaf's accumulated `grad`.
pub fn grad<T: Scalar>(
    output: &Tensor<T>,
    inputs: &[&Tensor<T>],
    create_graph: bool,
) -> Result<Vec<Tensor<T>>> {
    if output.numel() != 1 {
        return Err(Error::Rank {
            op: "grad",
            expected: 0,
            got: output.shape().to_vec(),
        });
    }
    if inputs.iter().any(|t| !t.is_tracked()) || !output.is_tracked() {
        return Err(Error::Disconnected);
    }
    let (mut grads, _) = run_backward(output, Targets::Only(inputs), create_graph)?;
    inputs
        .iter()
        .map(|t| grads.remove(&t.id()).ok_or(Error::Disconnected))
        .collect()
}

/// Like [`grad`], but inputs the output does not depend on get `None`
/// instead of failing the whole call.
pub fn grad_allow_unused<T: Scalar>(
    output: &Tensor<T>,
    inputs: &[&Tensor<T>],
    create_graph: bool,
) -> Result<Vec<Option<Tensor<T>>>> {
    if output.numel() != 1 {
        return Err(Error::Rank {
            op: "grad",
            expected: 0,
            got: output.shape().to_vec(),
        });
    }
    let tracked: Vec<&Tensor<T>> = inputs.iter().copied().filter(|t| t.is_tracked()).collect();
    if !output.is_tracked() || tracked.is_empty() {
        return Ok(vec![None; inputs.len()]);
    }
    let mut grads = match run_backward(output, Targets::Only(&tracked), create_graph) {
        Ok((grads, _)) => grads,
        Err(Error::Disconnected) => HashMap::new(),
        Err(e) => return Err(e),
    };
    Ok(inputs.iter().map(|t| grads.remove(&t.id())).collect())
}

/// `∇_x out`, recorded on the graph so it can be differentiated again.
pub fn input_gradient<T: Scalar>(out: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = grad(out, &[x], true)?;
    Ok(g.pop().expect("one input"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(vals: &[f64]) -> Tensor<f64> {
        Tensor::param(vals.to_vec(), &[vals.len()]).unwrap()
    }

    #[test]
    fn sum_of_squares() {
        let t = x(&[1.0, 2.0, 3.0]);
        t.square().sum().backward().unwrap();
        assert_eq!(t.grad().unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn second_backward_accumulates() {
        let t = x(&[1.0, -2.0]);
        let loss = t.mul(&t).unwrap().scale(3.0).sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(t.grad().unwrap().data(), &[12.0, -24.0]);
        t.zero_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn cube_double_backward() {
        let t = x(&[2.0]);
        let y = t.mul(&t).unwrap().mul(&t).unwrap().sum();
        let dy = input_gradient(&y, &t).unwrap();
        assert_eq!(dy.data(), &[12.0]);
        assert!(dy.is_tracked());
        let d2 = grad(&dy.sum(), &[&t], false).unwrap();
        assert_eq!(d2[0].data(), &[12.0]);
    }

    #[test]
    fn input_gradient_examples() {
        let t = x(&[1.0, -4.0, 0.5]);
        let g = input_gradient(&t.scale(3.0).sum(), &t).unwrap();
        assert_eq!(g.data(), &[3.0, 3.0, 3.0]);
        let g = input_gradient(&t.square().sum().scale(0.5), &t).unwrap();
        assert_eq!(g.data(), t.data());
    }

    #[test]
    fn disconnected_input_is_an_error() {
        let a = x(&[1.0]);
        let b = x(&[2.0]);
        let out = a.square().sum();
        assert!(matches!(input_gradient(&out, &b), Err(Error::Disconnected)));
    }

    #[test]
    fn non_scalar_backward_is_a_rank_error() {
        let a = x(&[1.0, 2.0]);
        assert!(matches!(a.square().backward(), Err(Error::Rank { .. })));
    }

    #[test]
    fn no_grad_records_nothing() {
        let a = x(&[1.0]);
        let _g = no_grad();
        let out = a.square();
        assert!(!out.is_tracked());
        assert!(out.op_name().is_none());
    }

    #[test]
    fn grad_leaves_accumulators_untouched() {
        let a = x(&[3.0]);
        let g = grad(&a.square().sum(), &[&a], false).unwrap();
        assert_eq!(g[0].data(), &[6.0]);
        assert!(a.grad().is_none());
        assert!(!g[0].is_tracked());
    }

    #[test]
    fn unused_inputs_get_none() {
        let a = x(&[3.0]);
        let b = x(&[1.0]);
        let g = grad_allow_unused(&a.square().sum(), &[&a, &b], false).unwrap();
        assert_eq!(g[0].as_ref().unwrap().data(), &[6.0]);
        assert!(g[1].is_none());
        let g = grad_allow_unused(&a.square().sum(), &[&b], false).unwrap();
        assert!(g[0].is_none());
    }
}
