//! Reverse-mode automatic differentiation over a recorded op list.
//!
//! Nodes are appended in evaluation order, so node ids are a topological
//! order and [`Graph::backward`] is a single reverse sweep. Leaves can borrow
//! their tensors, which lets a forward pass reference the parameter set
//! without copying it.

use alloc::borrow::Cow;
use alloc::vec::Vec;

use crate::conv::{conv2d, conv2d_backward};
use crate::error::{Error, Result};
use crate::loss::{loss, LossKind};
use crate::ops;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Recorded operation; operands always precede the node that uses them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        dilation: usize,
    },
    Relu(NodeId),
    Add(NodeId, NodeId),
    Concat(NodeId, NodeId),
    Sum(NodeId),
    Loss {
        kind: LossKind,
        pred: NodeId,
        target: NodeId,
    },
}

#[derive(Debug)]
struct Node<'a, T: Scalar> {
    op: Op,
    value: Cow<'a, Tensor<T>>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Cow<'a, Tensor<T>>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            grad: None,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> Result<&Node<'a, T>> {
        self.nodes.get(id.0).ok_or(Error::UnknownNode(id.0))
    }

    fn needs(&self, ids: &[NodeId]) -> Result<bool> {
        let mut any = false;
        for &id in ids {
            any |= self.node(id)?.requires_grad;
        }
        Ok(any)
    }

    /// Leaf owning its tensor.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push(Op::Leaf, Cow::Owned(value), requires_grad)
    }

    /// Leaf borrowing its tensor for the lifetime of the graph.
    pub fn leaf_ref(&mut self, value: &'a Tensor<T>, requires_grad: bool) -> NodeId {
        self.push(Op::Leaf, Cow::Borrowed(value), requires_grad)
    }

    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, bias: NodeId, dilation: usize) -> Result<NodeId> {
        let out = conv2d(self.value(input)?, self.value(weight)?, self.value(bias)?, dilation)?;
        let rg = self.needs(&[input, weight, bias])?;
        Ok(self.push(
            Op::Conv2d {
                input,
                weight,
                bias,
                dilation,
            },
            Cow::Owned(out),
            rg,
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let out = ops::relu(self.value(x)?);
        let rg = self.needs(&[x])?;
        Ok(self.push(Op::Relu(x), Cow::Owned(out), rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = ops::add(self.value(a)?, self.value(b)?)?;
        let rg = self.needs(&[a, b])?;
        Ok(self.push(Op::Add(a, b), Cow::Owned(out), rg))
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = ops::concat_channels(self.value(a)?, self.value(b)?)?;
        let rg = self.needs(&[a, b])?;
        Ok(self.push(Op::Concat(a, b), Cow::Owned(out), rg))
    }

    /// Scalar sum of all elements.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x)?.sum();
        let rg = self.needs(&[x])?;
        Ok(self.push(Op::Sum(x), Cow::Owned(Tensor::scalar(T::from_f64(v))), rg))
    }

    /// Scalar pixel loss between a prediction and a target.
    pub fn loss(&mut self, kind: LossKind, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let out = loss(kind, self.value(pred)?, self.value(target)?)?;
        let rg = self.needs(&[pred, target])?;
        Ok(self.push(
            Op::Loss { kind, pred, target },
            Cow::Owned(Tensor::scalar(T::from_f64(out.value))),
            rg,
        ))
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor<T>> {
        Ok(&self.node(id)?.value)
    }

    pub fn op(&self, id: NodeId) -> Result<Op> {
        Ok(self.node(id)?.op)
    }

    pub fn ops(&self) -> impl Iterator<Item = Op> + '_ {
        self.nodes.iter().map(|n| n.op)
    }

    pub fn grad(&self, id: NodeId) -> Result<Option<&Tensor<T>>> {
        Ok(self.node(id)?.grad.as_ref())
    }

    pub fn take_grad(&mut self, id: NodeId) -> Result<Option<Tensor<T>>> {
        let n = self.nodes.get_mut(id.0).ok_or(Error::UnknownNode(id.0))?;
        Ok(n.grad.take())
    }

    /// Clears all gradients so the graph can be differentiated again.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Back-propagates from a scalar loss node (seed gradient 1).
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let shape = self.value(loss)?.shape().to_vec();
        if self.value(loss)?.len() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        self.backward_with_seed(loss, Tensor::ones(&shape))
    }

    /// Back-propagates an arbitrary upstream gradient from `root`.
    ///
    /// Every node reachable from `root` that requires a gradient ends up with
    /// one of matching shape. Constant leaves (`requires_grad == false`) and
    /// nodes depending only on them are skipped.
    pub fn backward_with_seed(&mut self, root: NodeId, seed: Tensor<T>) -> Result<()> {
        self.value(root)?.expect_shape("backward seed", seed.shape())?;
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.accumulate(root, seed)?;
        for idx in (0..=root.0).rev() {
            let Some(upstream) = self.nodes[idx].grad.take() else {
                continue;
            };
            let op = self.nodes[idx].op;
            let contributions = self.local_grads(op, &upstream)?;
            self.nodes[idx].grad = Some(upstream);
            for (id, g) in contributions {
                self.accumulate(id, g)?;
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, g: Tensor<T>) -> Result<()> {
        let node = &mut self.nodes[id.0];
        if !node.requires_grad {
            return Ok(());
        }
        match node.grad.as_mut() {
            Some(existing) => existing.add_assign(&g)?,
            None => {
                node.value.expect_shape("gradient", g.shape())?;
                node.grad = Some(g);
            }
        }
        Ok(())
    }

    fn local_grads(&self, op: Op, upstream: &Tensor<T>) -> Result<Vec<(NodeId, Tensor<T>)>> {
        let mut out = Vec::new();
        match op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                dilation,
            } => {
                let want_input = self.node(input)?.requires_grad;
                let g = conv2d_backward(self.value(input)?, self.value(weight)?, dilation, upstream, want_input)?;
                if let Some(gi) = g.input {
                    out.push((input, gi));
                }
                out.push((weight, g.weight));
                out.push((bias, g.bias));
            }
            Op::Relu(x) => out.push((x, ops::relu_backward(self.value(x)?, upstream)?)),
            Op::Add(a, b) => {
                out.push((a, upstream.clone()));
                out.push((b, upstream.clone()));
            }
            Op::Concat(a, b) => {
                let c1 = self.value(a)?.shape()[1];
                let (ga, gb) = ops::split_channels(upstream, c1)?;
                out.push((a, ga));
                out.push((b, gb));
            }
            Op::Sum(x) => {
                let s = upstream.data()[0];
                out.push((x, Tensor::full(self.value(x)?.shape(), s)));
            }
            Op::Loss { kind, pred, target } => {
                let s = upstream.data()[0];
                let mut g = loss(kind, self.value(pred)?, self.value(target)?)?.grad;
                g.scale(s);
                if self.node(target)?.requires_grad {
                    out.push((target, g.map(|v| -v)));
                }
                out.push((pred, g));
            }
        }
        Ok(out)
    }
}
