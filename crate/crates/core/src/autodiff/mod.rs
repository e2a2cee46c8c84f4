//! Dense `f64` tensors with a dynamic reverse-mode tape.

mod backward;
mod broadcast;
mod check;
mod ops;
mod tape;
mod tensor;

use alloc::vec::Vec;

pub use check::{finite_difference_check, gradient, scalar_fn};
pub use ops::{log_sigmoid, log_sum_exp, sigmoid, softplus, LAYER_NORM_EPS, MASK_FILL};
pub use tape::{Tape, TapeStats, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: &'static str },
    #[error("backward root must hold a single element, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
}

/// Operation selector for [`forward_op`].
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    MatMul,
    Sum,
    Mean,
    Exp,
    Log,
    Sigmoid,
    Softplus,
    Tanh,
    Softmax,
    LayerNorm,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    Reshape(Vec<usize>),
    Transpose,
    MaskedFill { mask: Vec<bool>, fill: f64 },
}

/// Applies `kind` to `inputs`, recording the result on their tape.
pub fn forward_op<'t>(kind: &OpKind, inputs: &[Var<'t>]) -> Result<Var<'t>, TensorError> {
    let arity = match kind {
        OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::MatMul => 2,
        OpKind::Concat { .. } => inputs.len().max(1),
        _ => 1,
    };
    if inputs.len() != arity {
        return Err(TensorError::InvalidArgument {
            op: "forward_op",
            reason: "wrong number of inputs for op kind",
        });
    }
    let a = inputs[0];
    match kind {
        OpKind::Add => a.add(inputs[1]),
        OpKind::Sub => a.sub(inputs[1]),
        OpKind::Mul => a.mul(inputs[1]),
        OpKind::MatMul => a.matmul(inputs[1]),
        OpKind::Sum => Ok(a.sum()),
        OpKind::Mean => Ok(a.mean()),
        OpKind::Exp => Ok(a.exp()),
        OpKind::Log => Ok(a.log()),
        OpKind::Sigmoid => Ok(a.sigmoid()),
        OpKind::Softplus => Ok(a.softplus()),
        OpKind::Tanh => Ok(a.tanh()),
        OpKind::Softmax => Ok(a.softmax()),
        OpKind::LayerNorm => Ok(a.layer_norm()),
        OpKind::Concat { axis } => Var::concat(inputs, *axis),
        OpKind::Slice { axis, start, len } => a.slice(*axis, *start, *len),
        OpKind::Reshape(shape) => a.reshape(shape),
        OpKind::Transpose => a.transpose(),
        OpKind::MaskedFill { mask, fill } => a.masked_fill(mask, *fill),
    }
}

#[cfg(test)]
mod tests;
