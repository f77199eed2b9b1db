//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every op in creation order. Because parents are
//! always created before their children, walking the tape backwards is a
//! valid topological order and `backward` needs no explicit sort.

mod kernels;
mod ops;

use crate::error::{ensure, Result};
use crate::tensor::{Element, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Padding applied to both ends of the last axis before a 1-D correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadSpec {
    Zero(usize),
    /// Mirror padding that does not repeat the edge sample.
    Reflect(usize),
}

impl PadSpec {
    pub fn amount(self) -> usize {
        match self {
            PadSpec::Zero(p) | PadSpec::Reflect(p) => p,
        }
    }

    fn is_reflect(self) -> bool {
        matches!(self, PadSpec::Reflect(_))
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Reshape(Var),
    Relu(Var),
    Abs(Var),
    Sqrt(Var),
    SumAll(Var),
    MeanAll(Var),
    Gap(Var),
    Concat(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    GroupMeans(Var, Vec<Vec<usize>>),
    SqDist(Var, Var),
    Strided { x: Var, offset: usize },
    Depthwise { x: Var, w: Var, b: Var, pad: PadSpec },
    Pointwise { x: Var, w: Var, b: Var },
    Stem { x: Var, w: Var, b: Var, pad: usize },
    Linear { x: Var, w: Var, b: Var },
    SoftmaxRows(Var),
    CrossEntropy { probs: Var, labels: Vec<usize> },
    CrossEntropyLogits { logits: Var, labels: Vec<usize>, probs: Tensor<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    /// Persistent accumulated gradient; only parameters carry one.
    grad: Option<Tensor<T>>,
}

/// Owns the values and backward recipes of one computation.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input: no gradient is tracked.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    /// A trainable leaf whose gradient accumulates across `backward` calls.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        let grad = Tensor::zeros(value.shape());
        let v = self.push_node(value, Op::Leaf, true);
        self.nodes[v.0].grad = Some(grad);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a parameter leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.fill(T::zero());
            }
        }
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert!(
            value.all_finite(),
            "non-finite value produced by {:?}",
            std::mem::discriminant(&op)
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_node(value, op, rg)
    }

    /// Propagates d(loss)/d(node) to every parameter reachable from `loss`,
    /// adding into the parameters' stored gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        ensure!(
            self.nodes[loss.0].value.is_scalar(),
            "backward needs a scalar loss, got shape {:?}",
            self.nodes[loss.0].value.shape()
        );
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                if let Some(acc) = self.nodes[idx].grad.as_mut() {
                    acc.add_assign(&g);
                }
                continue;
            }
            for (parent, pg) in self.local_grads(idx, &g) {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(existing) => existing.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(())
    }
}
