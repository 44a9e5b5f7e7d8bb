use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

/// Dense row-major float64 array that may take part in a reverse-mode graph.
///
/// Cloning is cheap: a `Tensor` is a shared handle to an immutable node. Only
/// the gradient buffer of a leaf is ever written after construction.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) node: Arc<Node>,
}

pub(crate) struct Node {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Mutex<Option<Vec<f64>>>,
    pub(crate) op: Op,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum UnaryKind {
    Relu,
    Sigmoid,
    Tanh,
    Abs,
    Square,
    Log,
    Cos,
    Sin,
    Scale(f64),
    Offset(f64),
    Clamp(f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    Max,
    Min,
}

pub(crate) enum Op {
    Leaf,
    Unary {
        input: Tensor,
        kind: UnaryKind,
    },
    Binary {
        lhs: Tensor,
        rhs: Tensor,
        kind: BinaryKind,
    },
    Sum(Tensor),
    Mean(Tensor),
    Gather {
        input: Tensor,
        index: Arc<Vec<usize>>,
    },
    Reshape(Tensor),
    Concat(Vec<Tensor>),
    Conv2d {
        input: Tensor,
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
}

impl Op {
    fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Unary { input, .. }
            | Op::Sum(input)
            | Op::Mean(input)
            | Op::Gather { input, .. }
            | Op::Reshape(input) => vec![input],
            Op::Binary { lhs, rhs, .. } => vec![lhs, rhs],
            Op::Concat(parts) => parts.iter().collect(),
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            } => vec![input, weight, bias],
        }
    }
}

impl Tensor {
    fn from_parts(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            node: Arc::new(Node {
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                op,
            }),
        }
    }

    fn validated(shape: &[usize], data: &[f64]) -> Result<()> {
        if shape.contains(&0) {
            return Err(Error::dim(
                "tensor",
                format!("zero-sized dimension in {shape:?}"),
            ));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} holds {numel} values, got {}", data.len()),
            ));
        }
        Ok(())
    }

    /// Constant tensor (no gradient).
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::validated(shape, &data)?;
        Ok(Self::from_parts(shape.to_vec(), data, false, Op::Leaf))
    }

    /// Leaf tensor whose gradient is accumulated by [`Tensor::backward`].
    pub fn parameter(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::validated(shape, &data)?;
        Ok(Self::from_parts(shape.to_vec(), data, true, Op::Leaf))
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![1], vec![value], false, Op::Leaf)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    pub(crate) fn op_result(shape: Vec<usize>, data: Vec<f64>, op: Op) -> Self {
        let requires_grad = op.parents().iter().any(|p| p.requires_grad());
        let op = if requires_grad { op } else { Op::Leaf };
        Self::from_parts(shape, data, requires_grad, op)
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.node.data
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.node.data[0])
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Same values, cut from any graph.
    pub fn detach(&self) -> Tensor {
        Self::from_parts(
            self.node.shape.clone(),
            self.node.data.clone(),
            false,
            Op::Leaf,
        )
    }

    /// Same values as a fresh gradient-tracking leaf.
    pub fn to_parameter(&self) -> Tensor {
        Self::from_parts(
            self.node.shape.clone(),
            self.node.data.clone(),
            true,
            Op::Leaf,
        )
    }

    pub(crate) fn key(&self) -> *const Node {
        Arc::as_ptr(&self.node)
    }

    /// Reverse-mode differentiation from a one-element tensor.
    ///
    /// Gradients are accumulated (not overwritten) into every gradient-tracking
    /// leaf reachable from `self`; call [`Tensor::zero_grad`] between passes to
    /// start fresh.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut grads: HashMap<*const Node, Vec<f64>> = HashMap::new();
        grads.insert(self.key(), vec![1.0]);

        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.key()) else {
                continue;
            };
            if let Op::Leaf = t.node.op {
                let mut slot = t.node.grad.lock().expect("grad lock poisoned");
                match slot.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => *slot = Some(g),
                }
                continue;
            }
            for (parent, pg) in super::ops::backward_op(t, &g) {
                if !parent.requires_grad() {
                    continue;
                }
                match grads.get_mut(&parent.key()) {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    None => {
                        grads.insert(parent.key(), pg);
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over gradient-tracking nodes: parents appear before children.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen: HashSet<*const Node> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.key()) {
                continue;
            }
            let parents: Vec<Tensor> = t
                .node
                .op
                .parents()
                .into_iter()
                .filter(|p| p.requires_grad())
                .cloned()
                .collect();
            stack.push((t, true));
            for p in parents.into_iter().rev() {
                if !seen.contains(&p.key()) {
                    stack.push((p, false));
                }
            }
        }
        order
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data().iter().take(6).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}

impl PartialEq for Tensor {
    /// Value equality: shape and bitwise data.
    fn eq(&self, other: &Self) -> bool {
        self.shape() == other.shape()
            && self
                .data()
                .iter()
                .zip(other.data())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
