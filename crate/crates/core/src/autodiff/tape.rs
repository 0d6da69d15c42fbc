//! Reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and `backward` is a single reverse sweep. Gradients of
//! leaves accumulate across `backward` calls until `zero_grad`; gradients of
//! intermediate nodes are dropped as soon as they have been propagated.
//!
//! Shape mismatches are contract violations and panic with both shapes.

use super::ops::{Broadcast, Op};
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node<T: Real> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

pub struct Tape<T: Real> {
    pub(crate) nodes: Vec<Node<T>>,
    pub(crate) grads: Vec<Option<Vec<T>>>,
    check_finite: bool,
    first_non_finite: Option<(usize, &'static str)>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new(), check_finite: false, first_non_finite: None }
    }

    /// Records the first operation whose output holds NaN or infinity.
    pub fn with_finite_check(mut self) -> Self {
        self.check_finite = true;
        self
    }

    /// `(node index, op name)` of the first non-finite output, if checking.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.first_non_finite
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf; `None` when nothing reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        if self.check_finite && self.first_non_finite.is_none() && !value.all_finite() {
            self.first_non_finite = Some((self.nodes.len(), op.name()));
        }
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Propagates d(loss)/d(node) to every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let numel = self.nodes[loss.0].value.numel();
        if numel != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        for i in 0..=loss.0 {
            if !matches!(self.nodes[i].op, Op::Leaf) {
                self.grads[i] = None;
            }
        }
        let seed = vec![T::one()];
        accumulate(&self.nodes, &mut self.grads, loss, &seed);
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) || !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            super::ops::backward_node(&self.nodes, &mut self.grads, i, &g);
        }
        Ok(())
    }
}

/// Adds `delta` into the gradient slot of `v` if it tracks gradients.
pub(crate) fn accumulate<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], v: Var, delta: &[T]) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(g) => {
            for (a, &d) in g.iter_mut().zip(delta) {
                *a += d;
            }
        }
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

/// Like [`accumulate`] but moves `delta` in when the slot is empty.
pub(crate) fn accumulate_owned<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], v: Var, delta: Vec<T>) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(g) => {
            for (a, d) in g.iter_mut().zip(delta) {
                *a += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

pub(crate) fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

impl Broadcast {
    pub(crate) fn new(a: &[usize], b: &[usize]) -> (Vec<usize>, Broadcast) {
        if a == b {
            return (a.to_vec(), Broadcast::Same);
        }
        let out = broadcast_shapes(a, b)
            .unwrap_or_else(|| panic!("shapes {a:?} and {b:?} do not broadcast"));
        (out.clone(), Broadcast::Offsets { a: offsets(a, &out), b: offsets(b, &out) })
    }
}

/// For each output element, the offset of the matching input element.
fn offsets(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let in_strides = super::tensor::strides(shape);
    let mut st = vec![0usize; rank];
    for i in 0..rank {
        if i + shape.len() >= rank {
            let k = i + shape.len() - rank;
            st[i] = if shape[k] == 1 { 0 } else { in_strides[k] };
        }
    }
    let numel: usize = out.iter().product();
    let mut res = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..numel {
        res.push(off);
        for a in (0..rank).rev() {
            idx[a] += 1;
            off += st[a];
            if idx[a] < out[a] {
                break;
            }
            off -= st[a] * idx[a];
            idx[a] = 0;
        }
    }
    res
}
