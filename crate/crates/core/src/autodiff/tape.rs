use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Ref, RefCell};
use core::fmt;

use super::broadcast::Broadcast;
use super::tensor::{numel, Tensor};
use super::TensorError;

/// Recorded operation together with what its backward rule needs.
pub(crate) enum Op {
    Leaf,
    Add(usize, usize, Broadcast),
    Sub(usize, usize, Broadcast),
    Mul(usize, usize, Broadcast),
    Div(usize, usize, Broadcast),
    Scale(usize, f64),
    Offset(usize),
    MatMul(MatMulDims),
    Sum(usize),
    SumAxis {
        a: usize,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Exp(usize),
    Log(usize),
    Sigmoid(usize),
    Softplus(usize),
    Tanh(usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Sqrt(usize),
    Softmax(usize),
    LogSoftmax(usize),
    LogSumExp(usize),
    LayerNorm {
        a: usize,
        inv_std: Vec<f64>,
    },
    Concat {
        inputs: Vec<usize>,
        outer: usize,
        widths: Vec<usize>,
    },
    Slice {
        a: usize,
        outer: usize,
        width_in: usize,
        start: usize,
        width: usize,
    },
    Reshape(usize),
    Permute {
        a: usize,
        perm: Vec<usize>,
    },
    MaskedFill {
        a: usize,
        mask: Vec<bool>,
    },
    Gather {
        a: usize,
        outer: usize,
        len: usize,
        inner: usize,
        index: Vec<usize>,
    },
}

#[derive(Clone, Copy)]
pub(crate) struct MatMulDims {
    pub a: usize,
    pub b: usize,
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub a_batched: bool,
    pub b_batched: bool,
}

pub(crate) struct Node {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub op: Op,
    pub requires_grad: bool,
}

#[derive(Default)]
pub(crate) struct Inner {
    pub nodes: Vec<Node>,
    /// Accumulated gradients of differentiable leaves, indexed by node id.
    pub leaf_grads: Vec<Option<Vec<f64>>>,
    pub matmul_flops: u64,
    pub floats: usize,
}

/// Size counters for everything recorded on a tape so far.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TapeStats {
    pub nodes: usize,
    /// Total number of `f64` values held by recorded nodes. The tape keeps
    /// every node alive until it is dropped, so this is also its high-water mark.
    pub floats: usize,
    /// Multiply-adds performed by `matmul` forward passes.
    pub matmul_flops: u64,
}

/// Dynamic computation tape for reverse-mode differentiation.
///
/// Every forward operation appends a node; nodes are therefore stored in
/// topological order. A tape is meant to be rebuilt for every forward pass.
///
/// Calling [`Tape::backward`] several times accumulates into the gradients
/// of leaves until [`Tape::zero_grad`] is called.
#[derive(Default)]
pub struct Tape {
    pub(crate) inner: RefCell<Inner>,
}

/// Handle to a node of a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Records a differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.input(value, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.input(value, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn input(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let shape = value.shape().to_vec();
        let data = value.into_data();
        let mut inner = self.inner.borrow_mut();
        inner.floats += data.len();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            shape,
            value: data,
            op: Op::Leaf,
            requires_grad,
        });
        Var { tape: self, id }
    }

    pub(crate) fn push(&self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var<'_> {
        debug_assert_eq!(numel(&shape), value.len());
        let mut inner = self.inner.borrow_mut();
        let requires_grad = op_inputs(&op).iter().any(|&i| inner.nodes[i].requires_grad);
        if let Op::MatMul(d) = &op {
            inner.matmul_flops += (d.batch * d.m * d.k * d.n) as u64;
        }
        inner.floats += value.len();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var { tape: self, id }
    }

    pub(crate) fn nodes(&self) -> Ref<'_, Vec<Node>> {
        Ref::map(self.inner.borrow(), |i| &i.nodes)
    }

    pub fn stats(&self) -> TapeStats {
        let inner = self.inner.borrow();
        TapeStats {
            nodes: inner.nodes.len(),
            floats: inner.floats,
            matmul_flops: inner.matmul_flops,
        }
    }

    /// Accumulated gradient of `var`; zeros when nothing reached it.
    pub fn grad(&self, var: Var<'_>) -> Tensor {
        let inner = self.inner.borrow();
        let node = &inner.nodes[var.id];
        let data = match inner.leaf_grads.get(var.id) {
            Some(Some(g)) => g.clone(),
            _ => vec![0.0; node.value.len()],
        };
        Tensor::new(node.shape.clone(), data).expect("gradient has node shape")
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().leaf_grads.clear();
    }

    /// Propagates d(root)/d(leaf) into every differentiable leaf reachable
    /// from `root`. `root` must hold exactly one element.
    pub fn backward(&self, root: Var<'_>) -> Result<(), TensorError> {
        let mut inner = self.inner.borrow_mut();
        let Inner { nodes, leaf_grads, .. } = &mut *inner;
        let root_node = &nodes[root.id];
        if root_node.value.len() != 1 {
            return Err(TensorError::NotScalar {
                shape: root_node.shape.clone(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(root.id + 1, || None);
        grads[root.id] = Some(vec![1.0]);

        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                if leaf_grads.len() < nodes.len() {
                    leaf_grads.resize_with(nodes.len(), || None);
                }
                match &mut leaf_grads[id] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(g),
                }
                continue;
            }
            super::backward::propagate(nodes, id, &g, &mut grads);
        }
        Ok(())
    }
}

pub(crate) fn op_inputs(op: &Op) -> Vec<usize> {
    use Op::*;
    match op {
        Leaf => Vec::new(),
        Add(a, b, _) | Sub(a, b, _) | Mul(a, b, _) | Div(a, b, _) => vec![*a, *b],
        MatMul(d) => vec![d.a, d.b],
        Scale(a, _)
        | Offset(a)
        | Sum(a)
        | Exp(a)
        | Log(a)
        | Sigmoid(a)
        | Softplus(a)
        | Tanh(a)
        | Relu(a)
        | LeakyRelu(a, _)
        | Sqrt(a)
        | Softmax(a)
        | LogSoftmax(a)
        | LogSumExp(a)
        | Reshape(a) => vec![*a],
        SumAxis { a, .. }
        | LayerNorm { a, .. }
        | Slice { a, .. }
        | Permute { a, .. }
        | MaskedFill { a, .. }
        | Gather { a, .. } => vec![*a],
        Concat { inputs, .. } => inputs.clone(),
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes()[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes()[self.id].value.len()
    }

    pub fn value(&self) -> Tensor {
        let nodes = self.tape.nodes();
        let n = &nodes[self.id];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node value has node shape")
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.tape.nodes()[self.id].value.clone()
    }

    /// Value of a single-element node.
    pub fn item(&self) -> f64 {
        let nodes = self.tape.nodes();
        let v = &nodes[self.id].value;
        assert_eq!(v.len(), 1, "item() on a tensor with {} elements", v.len());
        v[0]
    }

    pub fn grad(&self) -> Tensor {
        self.tape.grad(*self)
    }

    pub fn backward(&self) -> Result<(), TensorError> {
        self.tape.backward(*self)
    }
}
