//! Forward rules. Each method appends one node to the tape.

use alloc::vec;
use alloc::vec::Vec;

use super::broadcast::{broadcast_shape, Broadcast};
use super::tape::{MatMulDims, Op, Var};
use super::tensor::numel;
use super::TensorError;

/// Fill value written by [`Var::masked_fill`] callers ahead of a softmax.
pub const MASK_FILL: f64 = -1e9;

/// Epsilon inside the square root of [`Var::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

/// `log(sigmoid(x))` without cancellation.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + libm::log(xs.iter().map(|x| libm::exp(x - m)).sum::<f64>())
}

fn last_dim(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

impl<'t> Var<'t> {
    fn unary(self, f: impl Fn(f64) -> f64, op: Op) -> Var<'t> {
        let (shape, value) = {
            let nodes = self.tape.nodes();
            let n = &nodes[self.id];
            (n.shape.clone(), n.value.iter().map(|&x| f(x)).collect())
        };
        self.tape.push(shape, value, op)
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        make: fn(usize, usize, Broadcast) -> Op,
    ) -> Result<Var<'t>, TensorError> {
        let (shape, value, plan) = {
            let nodes = self.tape.nodes();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            let out = broadcast_shape(&a.shape, &b.shape).ok_or_else(|| TensorError::ShapeMismatch {
                op: name,
                lhs: a.shape.clone(),
                rhs: b.shape.clone(),
            })?;
            let plan = Broadcast::plan(&a.shape, &b.shape, &out);
            let no = numel(&out);
            let mut value = vec![0.0; no];
            plan.for_each(a.value.len(), b.value.len(), no, |o, i, j| {
                value[o] = f(a.value[i], b.value[j]);
            });
            (out, value, plan)
        };
        Ok(self.tape.push(shape, value, make(self.id, other.id, plan)))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.binary(other, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.binary(other, "div", |a, b| a / b, Op::Div)
    }

    pub fn scale(self, factor: f64) -> Var<'t> {
        self.unary(|x| x * factor, Op::Scale(self.id, factor))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    /// Adds a constant to every element.
    pub fn offset(self, c: f64) -> Var<'t> {
        self.unary(|x| x + c, Op::Offset(self.id))
    }

    pub fn square(self) -> Var<'t> {
        self.mul(self).expect("same shape")
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(libm::exp, Op::Exp(self.id))
    }

    pub fn log(self) -> Var<'t> {
        self.unary(libm::log, Op::Log(self.id))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(sigmoid, Op::Sigmoid(self.id))
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary(softplus, Op::Softplus(self.id))
    }

    /// `log(sigmoid(x))`, computed as `-softplus(-x)`.
    pub fn log_sigmoid(self) -> Var<'t> {
        self.neg().softplus().neg()
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(libm::tanh, Op::Tanh(self.id))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(|x| x.max(0.0), Op::Relu(self.id))
    }

    /// `x` for positive inputs, `slope · x` otherwise.
    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        self.unary(|x| if x > 0.0 { x } else { slope * x }, Op::LeakyRelu(self.id, slope))
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(libm::sqrt, Op::Sqrt(self.id))
    }

    /// Sum of all elements, as a scalar (shape `[]`).
    pub fn sum(self) -> Var<'t> {
        let s = self.tape.nodes()[self.id].value.iter().sum();
        self.tape.push(Vec::new(), vec![s], Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums over `axis`, removing it from the shape.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>, TensorError> {
        let (shape, value, outer, len, inner) = {
            let nodes = self.tape.nodes();
            let a = &nodes[self.id];
            if axis >= a.shape.len() {
                return Err(TensorError::InvalidAxis {
                    op: "sum_axis",
                    axis,
                    shape: a.shape.clone(),
                });
            }
            let outer = numel(&a.shape[..axis]);
            let len = a.shape[axis];
            let inner = numel(&a.shape[axis + 1..]);
            let mut value = vec![0.0; outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    let src = &a.value[(o * len + l) * inner..(o * len + l + 1) * inner];
                    let dst = &mut value[o * inner..(o + 1) * inner];
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                }
            }
            let mut shape = a.shape.clone();
            shape.remove(axis);
            (shape, value, outer, len, inner)
        };
        Ok(self.tape.push(
            shape,
            value,
            Op::SumAxis {
                a: self.id,
                outer,
                len,
                inner,
            },
        ))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>, TensorError> {
        let len = self.shape().get(axis).copied().unwrap_or(1);
        Ok(self.sum_axis(axis)?.scale(1.0 / len as f64))
    }

    /// Matrix product over the last two axes.
    ///
    /// Leading axes are batch axes. Either both operands carry the same
    /// batch axes, or one of them is a plain matrix shared across the batch.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        let (shape, value, dims) = {
            let nodes = self.tape.nodes();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            let err = || TensorError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape.clone(),
                rhs: b.shape.clone(),
            };
            if a.shape.len() < 2 || b.shape.len() < 2 {
                return Err(err());
            }
            let (ra, rb) = (a.shape.len(), b.shape.len());
            let (m, k) = (a.shape[ra - 2], a.shape[ra - 1]);
            let (k2, n) = (b.shape[rb - 2], b.shape[rb - 1]);
            if k != k2 {
                return Err(err());
            }
            let (lead_a, lead_b) = (&a.shape[..ra - 2], &b.shape[..rb - 2]);
            let (lead, a_batched, b_batched) = if lead_a == lead_b {
                (lead_a.to_vec(), true, true)
            } else if lead_b.is_empty() {
                (lead_a.to_vec(), true, false)
            } else if lead_a.is_empty() {
                (lead_b.to_vec(), false, true)
            } else {
                return Err(err());
            };
            let batch = numel(&lead);
            let mut value = vec![0.0; batch * m * n];
            for bi in 0..batch {
                let ao = if a_batched { bi * m * k } else { 0 };
                let bo = if b_batched { bi * k * n } else { 0 };
                let av = &a.value[ao..ao + m * k];
                let bv = &b.value[bo..bo + k * n];
                let out = &mut value[bi * m * n..(bi + 1) * m * n];
                for i in 0..m {
                    let row = &mut out[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = av[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        let brow = &bv[p * n..(p + 1) * n];
                        row.iter_mut().zip(brow).for_each(|(r, &x)| *r += aip * x);
                    }
                }
            }
            let mut shape = lead;
            shape.push(m);
            shape.push(n);
            let dims = MatMulDims {
                a: self.id,
                b: other.id,
                batch,
                m,
                k,
                n,
                a_batched,
                b_batched,
            };
            (shape, value, dims)
        };
        Ok(self.tape.push(shape, value, Op::MatMul(dims)))
    }

    fn rowwise(self, f: impl Fn(&[f64], &mut [f64]), op: Op) -> Var<'t> {
        let (shape, value) = {
            let nodes = self.tape.nodes();
            let a = &nodes[self.id];
            let w = last_dim(&a.shape);
            let mut value = vec![0.0; a.value.len()];
            if w > 0 {
                for (src, dst) in a.value.chunks(w).zip(value.chunks_mut(w)) {
                    f(src, dst);
                }
            }
            (a.shape.clone(), value)
        };
        self.tape.push(shape, value, op)
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Var<'t> {
        self.rowwise(
            |src, dst| {
                let m = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = libm::exp(s - m);
                    z += *d;
                }
                dst.iter_mut().for_each(|d| *d /= z);
            },
            Op::Softmax(self.id),
        )
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(self) -> Var<'t> {
        self.rowwise(
            |src, dst| {
                let lse = log_sum_exp(src);
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d = s - lse);
            },
            Op::LogSoftmax(self.id),
        )
    }

    /// Log-sum-exp over the last axis, removing it.
    pub fn log_sum_exp(self) -> Var<'t> {
        let (shape, value) = {
            let nodes = self.tape.nodes();
            let a = &nodes[self.id];
            let w = last_dim(&a.shape).max(1);
            let value: Vec<f64> = a.value.chunks(w).map(log_sum_exp).collect();
            let mut shape = a.shape.clone();
            shape.pop();
            (shape, value)
        };
        self.tape.push(shape, value, Op::LogSumExp(self.id))
    }

    /// Normalizes the last axis to zero mean and unit variance (no affine part).
    pub fn layer_norm(self) -> Var<'t> {
        let (shape, value, inv_std) = {
            let nodes = self.tape.nodes();
            let a = &nodes[self.id];
            let w = last_dim(&a.shape).max(1);
            let mut value = vec![0.0; a.value.len()];
            let mut inv_std = Vec::with_capacity(a.value.len() / w);
            for (src, dst) in a.value.chunks(w).zip(value.chunks_mut(w)) {
                let mean = src.iter().sum::<f64>() / w as f64;
                let var = src.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / w as f64;
                let is = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d = (s - mean) * is);
                inv_std.push(is);
            }
            (a.shape.clone(), value, inv_std)
        };
        self.tape.push(shape, value, Op::LayerNorm { a: self.id, inv_std })
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>, TensorError> {
        let value = {
            let nodes = self.tape.nodes();
            let a = &nodes[self.id];
            if numel(shape) != a.value.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "reshape",
                    lhs: a.shape.clone(),
                    rhs: shape.to_vec(),
                });
            }
            a.value.clone()
        };
        Ok(self.tape.push(shape.to_vec(), value, Op::Reshape(self.id)))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'t>, TensorError> {
        let (shape, value) = {
            let nodes = self.tape.nodes();
            let a = &nodes[self.id];
            let nd = a.shape.len();
            let mut seen = vec![false; nd];
            if perm.len() != nd || perm.iter().any(|&p| p >= nd || core::mem::replace(&mut seen[p], true)) {
                return Err(TensorError::InvalidArgument {
                    op: "permute",
                    reason: "axes are not a permutation of the tensor's axes",
                });
            }
            let shape: Vec<usize> = perm.iter().map(|&p| a.shape[p]).collect();
            let value = permute_data(&a.value, &a.shape, perm);
            (shape, value)
        };
        Ok(self.tape.push(
            shape,
            value,
            Op::Permute {
                a: self.id,
                perm: perm.to_vec(),
            },
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'t>, TensorError> {
        let nd = self.shape().len();
        if nd < 2 {
            return Err(TensorError::InvalidArgument {
                op: "transpose",
                reason: "needs at least two axes",
            });
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 2, nd - 1);
        self.permute(&perm)
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>, TensorError> {
        let first = parts.first().ok_or(TensorError::InvalidArgument {
            op: "concat",
            reason: "no inputs",
        })?;
        let tape = first.tape;
        let (shape, value, outer, widths) = {
            let nodes = tape.nodes();
            let base = &nodes[first.id].shape;
            if axis >= base.len() {
                return Err(TensorError::InvalidAxis {
                    op: "concat",
                    axis,
                    shape: base.clone(),
                });
            }
            let outer = numel(&base[..axis]);
            let inner = numel(&base[axis + 1..]);
            let mut total = 0;
            let mut widths = Vec::with_capacity(parts.len());
            for p in parts {
                let s = &nodes[p.id].shape;
                if s.len() != base.len() || s[..axis] != base[..axis] || s[axis + 1..] != base[axis + 1..] {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat",
                        lhs: base.clone(),
                        rhs: s.clone(),
                    });
                }
                total += s[axis];
                widths.push(s[axis] * inner);
            }
            let row: usize = widths.iter().sum();
            let mut value = Vec::with_capacity(outer * row);
            for o in 0..outer {
                for (p, &w) in parts.iter().zip(&widths) {
                    value.extend_from_slice(&nodes[p.id].value[o * w..(o + 1) * w]);
                }
            }
            let mut shape = base.clone();
            shape[axis] = total;
            (shape, value, outer, widths)
        };
        let inputs = parts.iter().map(|p| p.id).collect();
        Ok(tape.push(shape, value, Op::Concat { inputs, outer, widths }))
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>, TensorError> {
        let (shape, value, outer, width_in, inner) = {
            let nodes = self.tape.nodes();
            let a = &nodes[self.id];
            if axis >= a.shape.len() {
                return Err(TensorError::InvalidAxis {
                    op: "slice",
                    axis,
                    shape: a.shape.clone(),
                });
            }
            if start + len > a.shape[axis] {
                return Err(TensorError::InvalidArgument {
                    op: "slice",
                    reason: "range exceeds axis length",
                });
            }
            let outer = numel(&a.shape[..axis]);
            let inner = numel(&a.shape[axis + 1..]);
            let width_in = a.shape[axis] * inner;
            let mut value = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = o * width_in + start * inner;
                value.extend_from_slice(&a.value[base..base + len * inner]);
            }
            let mut shape = a.shape.clone();
            shape[axis] = len;
            (shape, value, outer, width_in, inner)
        };
        Ok(self.tape.push(
            shape,
            value,
            Op::Slice {
                a: self.id,
                outer,
                width_in,
                start: start * inner,
                width: len * inner,
            },
        ))
    }

    /// Replaces elements where `mask` is true by `fill`. The mask covers the
    /// trailing axes and repeats over the leading ones.
    pub fn masked_fill(self, mask: &[bool], fill: f64) -> Result<Var<'t>, TensorError> {
        let (shape, value) = {
            let nodes = self.tape.nodes();
            let a = &nodes[self.id];
            if mask.is_empty() || !a.value.len().is_multiple_of(mask.len()) {
                return Err(TensorError::InvalidArgument {
                    op: "masked_fill",
                    reason: "mask length does not tile the tensor",
                });
            }
            let value = a
                .value
                .iter()
                .enumerate()
                .map(|(i, &x)| if mask[i % mask.len()] { fill } else { x })
                .collect();
            (a.shape.clone(), value)
        };
        Ok(self.tape.push(
            shape,
            value,
            Op::MaskedFill {
                a: self.id,
                mask: mask.to_vec(),
            },
        ))
    }

    /// Selects entries along `axis` independently for every position of the
    /// leading axes. `index` has `numel(shape[..axis]) * count` entries and
    /// the result replaces the axis length by `count`.
    pub fn gather(self, axis: usize, index: &[usize], count: usize) -> Result<Var<'t>, TensorError> {
        let (shape, value, outer, len, inner) = {
            let nodes = self.tape.nodes();
            let a = &nodes[self.id];
            if axis >= a.shape.len() {
                return Err(TensorError::InvalidAxis {
                    op: "gather",
                    axis,
                    shape: a.shape.clone(),
                });
            }
            let outer = numel(&a.shape[..axis]);
            let len = a.shape[axis];
            let inner = numel(&a.shape[axis + 1..]);
            if index.len() != outer * count || index.iter().any(|&i| i >= len) {
                return Err(TensorError::InvalidArgument {
                    op: "gather",
                    reason: "index count or range does not match the tensor",
                });
            }
            let mut value = Vec::with_capacity(outer * count * inner);
            for o in 0..outer {
                for &i in &index[o * count..(o + 1) * count] {
                    let base = (o * len + i) * inner;
                    value.extend_from_slice(&a.value[base..base + inner]);
                }
            }
            let mut shape = a.shape.clone();
            shape[axis] = count;
            (shape, value, outer, len, inner)
        };
        Ok(self.tape.push(
            shape,
            value,
            Op::Gather {
                a: self.id,
                outer,
                len,
                inner,
                index: index.to_vec(),
            },
        ))
    }
}

pub(crate) fn permute_data(src: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let nd = shape.len();
    let mut in_strides = vec![1usize; nd];
    for i in (0..nd.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = src.len();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; nd];
    let mut offset = 0usize;
    for _ in 0..total {
        out.push(src[offset]);
        let mut d = nd;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            offset += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

pub(crate) fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}
