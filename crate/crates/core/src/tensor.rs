//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! The graph is define-by-run: every operation that involves at least one
//! gradient-requiring input records an interior node holding its inputs
//! and a backward closure. `Tensor` is a cheap handle (an `Arc`), so
//! cloning a tensor never copies data.
//!
//! A few deliberate choices:
//!
//! * Node ordering for backward traversal comes from a global monotone
//!   sequence number instead of an explicit topological sort. Creation
//!   order is a valid topological order for a define-by-run graph, so
//!   walking nodes in descending sequence is correct and deterministic.
//! * Leaf gradients live behind a `Mutex` so that read-only graphs can be
//!   shared across threads (inference on several streams at once). The
//!   lock is uncontended in practice; training itself is single-streamed.
//! * Everything is f64. The numerics in this crate are checked against
//!   central finite differences, which is only meaningful in double
//!   precision.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

static NEXT_SEQ: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with gradient recording switched off on this thread. Ops
/// executed inside produce constants, so no graph memory is retained.
/// Used by inference paths (`separate`, evaluation).
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Backward rule of an interior node: maps the gradient with respect to
/// the node's output to gradients with respect to each input, in input
/// order. Closures capture the `Arc`s of whatever forward data they need.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>> + Send + Sync>;

enum Node {
    /// No gradient flows through (literals, detached values, anything
    /// created under `no_grad`).
    Constant,
    /// Trainable parameter; `backward` deposits the gradient here.
    Leaf { grad: Mutex<Option<Vec<f64>>> },
    /// Result of an op applied to at least one gradient-requiring input.
    Interior {
        op: &'static str,
        inputs: Vec<Tensor>,
        backward: BackwardFn,
    },
}

struct Inner {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    seq: u64,
    node: Node,
}

#[derive(Clone)]
pub struct Tensor {
    inner: Arc<Inner>,
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Arc<Vec<f64>>, node: Node) -> Tensor {
        Tensor {
            inner: Arc::new(Inner {
                shape,
                data,
                seq: NEXT_SEQ.fetch_add(1, Ordering::Relaxed),
                node,
            }),
        }
    }

    /// Constant tensor (gradient does not flow through it).
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("shape {:?} wants {} values, got {}", shape, numel_of(shape), data.len()),
            ));
        }
        check_finite("from_vec", &data)?;
        Ok(Tensor::build(shape.to_vec(), Arc::new(data), Node::Constant))
    }

    /// Trainable leaf. Gradients accumulate here on `backward`.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != data.len() {
            return Err(Error::shape(
                "param",
                format!("shape {:?} wants {} values, got {}", shape, numel_of(shape), data.len()),
            ));
        }
        check_finite("param", &data)?;
        Ok(Tensor::build(
            shape.to_vec(),
            Arc::new(data),
            Node::Leaf {
                grad: Mutex::new(None),
            },
        ))
    }

    pub fn scalar(v: f64) -> Result<Tensor> {
        Tensor::from_vec(vec![v], &[1])
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::build(shape.to_vec(), Arc::new(vec![0.0; numel_of(shape)]), Node::Constant)
    }

    /// Interior-node constructor used by the ops modules. Falls back to a
    /// constant when recording is off or no input participates, so
    /// inference never retains graph memory.
    pub(crate) fn interior(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Result<Tensor> {
        if numel_of(&shape) != data.len() {
            return Err(Error::shape(
                op,
                format!("op produced {} values for shape {:?}", data.len(), shape),
            ));
        }
        check_finite(op, &data)?;
        let record = grad_enabled() && inputs.iter().any(Tensor::requires_grad);
        let node = if record {
            Node::Interior { op, inputs, backward }
        } else {
            Node::Constant
        };
        Ok(Tensor::build(shape, Arc::new(data), node))
    }

    /// Same-shaped constant that shares this tensor's data but is cut off
    /// from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::build(self.inner.shape.clone(), Arc::clone(&self.inner.data), Node::Constant)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.inner.data)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.as_ref().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() == 1 {
            Ok(self.inner.data[0])
        } else {
            Err(Error::shape("item", format!("tensor has shape {:?}", self.shape())))
        }
    }

    pub(crate) fn seq(&self) -> u64 {
        self.inner.seq
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.inner.node, Node::Leaf { .. })
    }

    /// True when gradient flows through this tensor (leaf or interior).
    pub fn requires_grad(&self) -> bool {
        !matches!(self.inner.node, Node::Constant)
    }

    /// Copy of the accumulated gradient of a leaf, if any.
    pub fn grad(&self) -> Option<Vec<f64>> {
        match &self.inner.node {
            Node::Leaf { grad } => grad.lock().expect("grad lock").clone(),
            _ => None,
        }
    }

    /// Gradient of a leaf, with missing treated as zero. Handy for
    /// optimizers: a parameter that the loss never touched has zero grad.
    pub fn grad_or_zeros(&self) -> Vec<f64> {
        self.grad().unwrap_or_else(|| vec![0.0; self.numel()])
    }

    pub fn clear_grad(&self) {
        if let Node::Leaf { grad } = &self.inner.node {
            *grad.lock().expect("grad lock") = None;
        }
    }

    /// Reverse-mode sweep from a scalar. Fills `grad` on every reachable
    /// leaf. Fails if this tensor is not a scalar, or if any reachable
    /// leaf already carries a gradient (call `clear_grad` first — silent
    /// accumulation across backward calls is almost always a bug in this
    /// toolkit's usage, where the optimizer consumes grads every step).
    ///
    /// A constant scalar is allowed and trivially succeeds: nothing is
    /// reachable, so no gradients change.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Autodiff(format!(
                "backward requires a scalar, got shape {:?}",
                self.shape()
            )));
        }

        // Reachable gradient-participating nodes, keyed by sequence number.
        let mut reach: BTreeMap<u64, Tensor> = BTreeMap::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if matches!(t.inner.node, Node::Constant) || reach.contains_key(&t.seq()) {
                continue;
            }
            if let Node::Interior { inputs, .. } = &t.inner.node {
                for i in inputs {
                    stack.push(i.clone());
                }
            }
            reach.insert(t.seq(), t);
        }

        // Refuse to run before touching anything if a leaf still holds a
        // gradient from an earlier sweep.
        for t in reach.values() {
            if let Node::Leaf { grad } = &t.inner.node {
                if grad.lock().expect("grad lock").is_some() {
                    return Err(Error::Autodiff(
                        "leaf already has a gradient; clear_grad before calling backward again"
                            .into(),
                    ));
                }
            }
        }

        let mut pending: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        pending.insert(self.seq(), vec![1.0]);

        // Descending creation order is a topological order of the DAG.
        for (&seq, t) in reach.iter().rev() {
            let Some(gout) = pending.remove(&seq) else {
                continue;
            };
            match &t.inner.node {
                Node::Constant => unreachable!("constants are never recorded as reachable"),
                Node::Leaf { grad } => {
                    *grad.lock().expect("grad lock") = Some(gout);
                }
                Node::Interior { op, inputs, backward } => {
                    let gins = backward(&gout);
                    debug_assert_eq!(gins.len(), inputs.len(), "backward arity of {op}");
                    for (inp, gin) in inputs.iter().zip(gins) {
                        if !inp.requires_grad() {
                            continue;
                        }
                        if gin.len() != inp.numel() {
                            return Err(Error::Autodiff(format!(
                                "backward of {op} returned {} values for input of {}",
                                gin.len(),
                                inp.numel()
                            )));
                        }
                        check_finite(op, &gin)?;
                        match pending.entry(inp.seq()) {
                            std::collections::btree_map::Entry::Vacant(e) => {
                                e.insert(gin);
                            }
                            std::collections::btree_map::Entry::Occupied(mut e) => {
                                for (acc, g) in e.get_mut().iter_mut().zip(&gin) {
                                    *acc += g;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.inner.node {
            Node::Constant => "const",
            Node::Leaf { .. } => "leaf",
            Node::Interior { op, .. } => op,
        };
        let preview: Vec<f64> = self.data().iter().take(6).copied().collect();
        let ell = if self.numel() > 6 { ", ..." } else { "" };
        write!(f, "Tensor<{}>{:?} {:?}{}", kind, self.shape(), preview, ell)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    #[test]
    fn from_vec_checks_shape_and_finiteness() {
        assert!(Tensor::from_vec(vec![1.0, 2.0], &[3]).is_err());
        assert!(Tensor::from_vec(vec![1.0, f64::NAN], &[2]).is_err());
        assert!(Tensor::from_vec(vec![1.0, f64::INFINITY], &[2]).is_err());
        assert!(Tensor::from_vec(vec![1.0, 2.0], &[2]).is_ok());
    }

    #[test]
    fn backward_through_a_diamond_accumulates() {
        // z = x*x + x  =>  dz/dx = 2x + 1 = 7 at x = 3.
        let x = Tensor::param(vec![3.0], &[1]).unwrap();
        let z = ops::add(&ops::mul(&x, &x).unwrap(), &x).unwrap();
        z.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![7.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let y = ops::scale(&x, 2.0).unwrap();
        assert!(y.backward().is_err());
    }

    #[test]
    fn repeated_backward_without_clear_is_rejected() {
        let x = Tensor::param(vec![2.0], &[1]).unwrap();
        let y = ops::mul(&x, &x).unwrap();
        y.backward().unwrap();
        assert!(y.backward().is_err());
        x.clear_grad();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0]);
    }

    #[test]
    fn backward_on_constant_scalar_is_a_no_op() {
        let c = Tensor::scalar(5.0).unwrap();
        c.backward().unwrap();
    }

    #[test]
    fn no_grad_detaches_results() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let y = no_grad(|| ops::sum(&x).unwrap());
        assert!(!y.requires_grad());
        // And recording resumes afterwards.
        let z = ops::sum(&x).unwrap();
        assert!(z.requires_grad());
    }

    #[test]
    fn leaf_untouched_by_loss_reports_no_grad() {
        let x = Tensor::param(vec![1.0], &[1]).unwrap();
        let y = Tensor::param(vec![2.0], &[1]).unwrap();
        let loss = ops::mul(&x, &x).unwrap();
        loss.backward().unwrap();
        assert!(y.grad().is_none());
        assert_eq!(y.grad_or_zeros(), vec![0.0]);
    }

    #[test]
    fn detach_shares_data_but_blocks_grad() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let d = x.detach();
        assert_eq!(d.data(), x.data());
        assert!(!d.requires_grad());
    }

    #[test]
    fn shared_subgraph_used_by_two_consumers() {
        // y = sum(2x) computed twice from the same intermediate; the
        // intermediate's gradient must accumulate from both consumers.
        let x = Tensor::param(vec![1.0, 1.0], &[2]).unwrap();
        let t = ops::scale(&x, 2.0).unwrap();
        let loss = ops::add(&ops::sum(&t).unwrap(), &ops::sum(&t).unwrap()).unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, 4.0]);
    }
}
