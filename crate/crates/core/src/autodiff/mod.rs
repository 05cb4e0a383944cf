//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] is an append-only list of nodes. Leaves hold values supplied
//! by the caller; every other node records a primitive [`OpKind`], the ids
//! of its inputs and its cached forward value. Node ids only ever reference
//! earlier nodes, so the tape is always in topological order and
//! [`Tape::backward`] is a single reverse sweep.
//!
//! Tapes are cheap to build and are meant to be rebuilt for every minibatch.

mod finite_diff;
mod ops;

pub use finite_diff::finite_difference_gradient;
pub use ops::{sigmoid, softplus, OpKind};


use crate::error::{Error, Result};
use crate::tensor::TensorValue;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum NodeKind {
    /// Caller-supplied value; `trainable` leaves receive adjoints.
    Leaf { trainable: bool },
    Op(OpKind),
}

#[derive(Clone, Debug)]
struct Node {
    kind: NodeKind,
    inputs: Vec<NodeId>,
    value: TensorValue,
    requires_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of trainable leaves. Leaves the root does not depend on are
/// absent and read as zero.
#[derive(Clone, Debug)]
pub struct Gradients {
    adjoints: Vec<Option<TensorValue>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&TensorValue> {
        self.adjoints.get(id.0).and_then(Option::as_ref)
    }

    /// Adjoint of `id`, or zeros shaped like the leaf value.
    pub fn get_or_zeros(&self, tape: &Tape, id: NodeId) -> TensorValue {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| TensorValue::zeros(tape.value(id).shape().clone()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: TensorValue) -> Result<NodeId> {
        self.push_leaf(value, true)
    }

    /// An input that never receives an adjoint (data, noise draws).
    pub fn constant(&mut self, value: TensorValue) -> Result<NodeId> {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: TensorValue, trainable: bool) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            kind: NodeKind::Leaf { trainable },
            inputs: Vec::new(),
            value,
            requires_grad: trainable,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::UnknownNode {
                id: id.0,
                len: self.nodes.len(),
            })
        }
    }

    pub fn value(&self, id: NodeId) -> &TensorValue {
        &self.nodes[id.0].value
    }

    pub fn try_value(&self, id: NodeId) -> Result<&TensorValue> {
        self.check(id)?;
        Ok(self.value(id))
    }

    /// Records `op` applied to `inputs` and returns the new node.
    pub fn primitive(&mut self, op: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        for &id in inputs {
            self.check(id)?;
        }
        let values: Vec<&TensorValue> = inputs.iter().map(|&id| &self.nodes[id.0].value).collect();
        let value = ops::forward(op, &values)?;
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|&id| self.nodes[id.0].requires_grad);
        self.nodes.push(Node {
            kind: NodeKind::Op(op),
            inputs: inputs.to_vec(),
            value,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Reverse sweep from a single-element `root`.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        self.check(root)?;
        let root_value = &self.nodes[root.0].value;
        if root_value.len() != 1 {
            return Err(Error::NonScalarRoot(root_value.shape().clone()));
        }
        let mut adjoints: Vec<Option<TensorValue>> = vec![None; root.0 + 1];
        adjoints[root.0] = Some(TensorValue::filled(root_value.shape().clone(), 1.0));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let op = match node.kind {
                NodeKind::Op(op) if node.requires_grad => op,
                _ => continue,
            };
            let Some(g) = adjoints[i].take() else { continue };
            let inputs: Vec<&TensorValue> = node.inputs.iter().map(|id| &self.nodes[id.0].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|id| self.nodes[id.0].requires_grad).collect();
            let contributions = ops::backward(op, &inputs, &node.value, &g, &needs);
            for (input, contribution) in node.inputs.iter().zip(contributions) {
                let Some(c) = contribution else { continue };
                match &mut adjoints[input.0] {
                    Some(acc) => acc.add_assign(&c),
                    slot @ None => *slot = Some(c),
                }
            }
        }

        // Only trainable leaves keep their adjoints.
        for (i, slot) in adjoints.iter_mut().enumerate() {
            if !matches!(self.nodes[i].kind, NodeKind::Leaf { trainable: true }) {
                *slot = None;
            }
        }
        Ok(Gradients { adjoints })
    }

    /// Recomputes every node from the leaf values.
    pub fn replay(&self) -> Result<Vec<TensorValue>> {
        let mut values: Vec<TensorValue> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.kind {
                NodeKind::Leaf { .. } => node.value.clone(),
                NodeKind::Op(op) => {
                    let inputs: Vec<&TensorValue> = node.inputs.iter().map(|id| &values[id.0]).collect();
                    ops::forward(op, &inputs)?
                }
            };
            values.push(v);
        }
        Ok(values)
    }

    // Convenience wrappers, one per primitive.

    pub fn matvec(&mut self, a: NodeId, x: NodeId) -> Result<NodeId> {
        self.primitive(OpKind::MatVec, &[a, x])
    }
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.primitive(OpKind::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.primitive(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.primitive(OpKind::Subtract, &[a, b])
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.primitive(OpKind::Hadamard, &[a, b])
    }
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.primitive(OpKind::Divide, &[a, b])
    }
    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.primitive(OpKind::Scale(c), &[a])
    }
    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.primitive(OpKind::AddScalar(c), &[a])
    }
    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.primitive(OpKind::Sigmoid, &[a])
    }
    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        self.primitive(OpKind::Softplus, &[a])
    }
    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.primitive(OpKind::Exp, &[a])
    }
    pub fn ln(&mut self, a: NodeId) -> Result<NodeId> {
        self.primitive(OpKind::Log, &[a])
    }
    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.primitive(OpKind::Square, &[a])
    }
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        self.primitive(OpKind::Clamp { lo, hi }, &[a])
    }
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.primitive(OpKind::ReduceSum, &[a])
    }
    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.primitive(OpKind::RowSum, &[a])
    }
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.primitive(OpKind::Dot, &[a, b])
    }
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        self.primitive(OpKind::AddBias, &[x, b])
    }
    pub fn scale_rows(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        self.primitive(OpKind::ScaleRows, &[x, s])
    }
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.primitive(OpKind::Concat, parts)
    }
    pub fn slice(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        self.primitive(OpKind::Slice { start, end }, &[x])
    }

    /// Mean of all elements.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.try_value(a)?.len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// `x W + b` for a row-major batch `x`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }
}
