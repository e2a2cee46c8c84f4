//! Parameter storage and the small layers shared by the encoder, the flow
//! network and the copula conditioner.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use rand::Rng;

use crate::autodiff::{Tape, Tensor, TensorError, Var};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(usize);

/// Named parameter tensors of a model, in creation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Overwrites every parameter from a flat vector laid out like [`flatten`](Self::flatten).
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<(), TensorError> {
        if flat.len() != self.num_values() {
            return Err(TensorError::DataLength {
                shape: vec![self.num_values()],
                len: flat.len(),
            });
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Replaces the tensor named `name`; its shape must not change.
    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<(), TensorError> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or(TensorError::InvalidArgument {
                op: "ParamStore::set",
                reason: "unknown parameter name",
            })?;
        if self.tensors[i].shape() != tensor.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "ParamStore::set",
                lhs: self.tensors[i].shape().to_vec(),
                rhs: tensor.shape().to_vec(),
            });
        }
        self.tensors[i] = tensor;
        Ok(())
    }

    /// Records every parameter on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape, requires_grad: bool) -> Bound<'t> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if requires_grad {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound { tape, vars }
    }
}

#[cfg(test)]
impl ParamStore {
    /// Adds uniform noise in `±scale` to every value, moving the parameters
    /// off any deliberately degenerate initialization.
    pub(crate) fn perturb(&mut self, scale: f64, rng: &mut RngStream) {
        for t in self.tensors_mut() {
            t.data_mut()
                .iter_mut()
                .for_each(|x| *x += rng.random_range(-scale..scale));
        }
    }
}

impl ParamStore {
    /// Views a flat vector `[num_values]` recorded on a tape as the
    /// parameters of this store, e.g. for finite-difference checks.
    pub fn bind_flat<'t>(&self, flat: Var<'t>) -> Result<Bound<'t>, TensorError> {
        let mut vars = Vec::with_capacity(self.tensors.len());
        let mut off = 0;
        for t in &self.tensors {
            let n = t.numel();
            vars.push(flat.slice(0, off, n)?.reshape(t.shape())?);
            off += n;
        }
        Ok(Bound {
            tape: flat.tape(),
            vars,
        })
    }
}

/// Parameters of a [`ParamStore`] recorded on one tape.
pub struct Bound<'t> {
    tape: &'t Tape,
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn get(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Gradients accumulated on the tape, aligned with the store.
    pub fn gradients(&self) -> Vec<Tensor> {
        self.vars.iter().map(|v| v.grad()).collect()
    }
}

/// Glorot-uniform matrix of shape `[fan_in, fan_out]`.
pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Tensor {
    let a = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("glorot shape")
}

/// Everything a forward pass needs besides its inputs.
pub struct Forward<'t, 'b> {
    pub params: &'b Bound<'t>,
    dropout: f64,
    rng: Option<RefCell<RngStream>>,
}

impl<'t, 'b> Forward<'t, 'b> {
    /// Evaluation mode: dropout disabled.
    pub fn eval(params: &'b Bound<'t>) -> Self {
        Forward {
            params,
            dropout: 0.0,
            rng: None,
        }
    }

    pub fn train(params: &'b Bound<'t>, dropout: f64, rng: RngStream) -> Self {
        Forward {
            params,
            dropout,
            rng: Some(RefCell::new(rng)),
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.params.tape()
    }

    pub fn p(&self, id: ParamId) -> Var<'t> {
        self.params.get(id)
    }

    /// Inverted dropout; identity in evaluation mode or at rate 0.
    pub fn dropout(&self, x: Var<'t>) -> Result<Var<'t>, TensorError> {
        let Some(rng) = &self.rng else { return Ok(x) };
        if self.dropout <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.dropout;
        let mut rng = rng.borrow_mut();
        let mask: Vec<f64> = (0..x.numel())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = self.tape().constant(Tensor::new(x.shape(), mask)?);
        x.mul(m)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Self {
        let weight = store.add(alloc::format!("{name}.weight"), glorot(fan_in, fan_out, rng));
        let bias = store.add(alloc::format!("{name}.bias"), Tensor::zeros(&[fan_out]));
        Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    /// `x W + b` over the last axis of `x`.
    pub fn forward<'t>(&self, f: &Forward<'t, '_>, x: Var<'t>) -> Result<Var<'t>, TensorError> {
        x.matmul(f.p(self.weight))?.add(f.p(self.bias))
    }
}

/// Linear layers with ReLU activations in between.
/// Negative-side slope of the hidden activation of every small network.
/// A plain ReLU head tends to die while the copula has not yet found any
/// dependence to model; the leak lets it recover.
pub const LEAKY_SLOPE: f64 = 0.1;

/// Hidden activation shared by all multilayer perceptrons.
pub fn activation(x: Var<'_>) -> Var<'_> {
    x.leaky_relu(LEAKY_SLOPE)
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `sizes = [input, hidden..., output]`.
    pub fn new(store: &mut ParamStore, name: &str, sizes: &[usize], rng: &mut RngStream) -> Self {
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &alloc::format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward<'t>(&self, f: &Forward<'t, '_>, mut x: Var<'t>) -> Result<Var<'t>, TensorError> {
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(f, x)?;
            if i < last {
                x = activation(x);
            }
        }
        Ok(x)
    }
}

/// Layer normalization with a learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: store.add(alloc::format!("{name}.gain"), Tensor::full(&[dim], 1.0)),
            bias: store.add(alloc::format!("{name}.bias"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward<'t>(&self, f: &Forward<'t, '_>, x: Var<'t>) -> Result<Var<'t>, TensorError> {
        x.layer_norm().mul(f.p(self.gain))?.add(f.p(self.bias))
    }
}

/// `[B, T, h*dh]` -> `[h*B, T, dh]`, heads outermost so that a mask over
/// `[B, ...]` tiles over heads.
pub fn split_heads<'t>(x: Var<'t>, heads: usize) -> Result<Var<'t>, TensorError> {
    let s = x.shape();
    let (b, t, d) = (s[0], s[1], s[2]);
    x.reshape(&[b, t, heads, d / heads])?
        .permute(&[2, 0, 1, 3])?
        .reshape(&[heads * b, t, d / heads])
}

/// Inverse of [`split_heads`].
pub fn merge_heads<'t>(x: Var<'t>, heads: usize) -> Result<Var<'t>, TensorError> {
    let s = x.shape();
    let (hb, t, dh) = (s[0], s[1], s[2]);
    let b = hb / heads;
    x.reshape(&[heads, b, t, dh])?
        .permute(&[1, 2, 0, 3])?
        .reshape(&[b, t, heads * dh])
}

/// Scaled dot-product attention on head-split inputs. `mask` (true = hidden)
/// covers `[B, Tq, Tk]` and tiles over heads. Returns the attended values and
/// the attention weights `[h*B, Tq, Tk]`.
pub fn attention<'t>(
    q: Var<'t>,
    k: Var<'t>,
    v: Var<'t>,
    mask: Option<&[bool]>,
) -> Result<(Var<'t>, Var<'t>), TensorError> {
    let dh = *q.shape().last().unwrap_or(&1);
    let mut scores = q.matmul(k.transpose()?)?.scale(1.0 / libm::sqrt(dh as f64));
    if let Some(m) = mask {
        scores = scores.masked_fill(m, crate::autodiff::MASK_FILL)?;
    }
    let weights = scores.softmax();
    Ok((weights.matmul(v)?, weights))
}

/// Multi-head self-attention over the middle axis of `[G, T, d]`.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl SelfAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut RngStream) -> Self {
        SelfAttention {
            query: Linear::new(store, &alloc::format!("{name}.query"), dim, dim, rng),
            key: Linear::new(store, &alloc::format!("{name}.key"), dim, dim, rng),
            value: Linear::new(store, &alloc::format!("{name}.value"), dim, dim, rng),
            output: Linear::new(store, &alloc::format!("{name}.output"), dim, dim, rng),
            heads,
        }
    }

    pub fn forward<'t>(&self, f: &Forward<'t, '_>, x: Var<'t>) -> Result<(Var<'t>, Var<'t>), TensorError> {
        let h = self.heads;
        let q = split_heads(self.query.forward(f, x)?, h)?;
        let k = split_heads(self.key.forward(f, x)?, h)?;
        let v = split_heads(self.value.forward(f, x)?, h)?;
        let (out, weights) = attention(q, k, v, None)?;
        Ok((self.output.forward(f, merge_heads(out, h)?)?, weights))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_check, scalar_fn};

    #[test]
    fn glorot_respects_bound() {
        let mut rng = RngStream::from_seed(0);
        let w = glorot(10, 6, &mut rng);
        let a = libm::sqrt(6.0 / 16.0);
        assert!(w.data().iter().all(|x| x.abs() <= a));
        assert_eq!(w.shape(), &[10, 6]);
    }

    #[test]
    fn heads_roundtrip() {
        let tape = Tape::new();
        let data: Vec<f64> = (0..2 * 3 * 4).map(|i| i as f64).collect();
        let x = tape.constant(Tensor::new(vec![2, 3, 4], data.clone()).unwrap());
        let back = merge_heads(split_heads(x, 2).unwrap(), 2).unwrap();
        assert_eq!(back.to_vec(), data);
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut rng = RngStream::from_seed(1);
        let mut store = ParamStore::new();
        let att = SelfAttention::new(&mut store, "att", 4, 2, &mut rng);
        let tape = Tape::new();
        let bound = store.bind(&tape, false);
        let f = Forward::eval(&bound);
        let x = tape.constant(glorot(15, 4, &mut rng).reshaped(vec![3, 5, 4]).unwrap());
        let (y, w) = att.forward(&f, x).unwrap();
        assert_eq!(y.shape(), vec![3, 5, 4]);
        for row in w.to_vec().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mlp_gradient_check() {
        let mut rng = RngStream::from_seed(2);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "mlp", &[3, 5, 2], &mut rng);
        let x = glorot(4, 3, &mut rng);
        let point = Tensor::vector(store.flatten());
        let f = scalar_fn(move |tape, p| {
            let bound = store.bind_flat(p)?;
            let fw = Forward::eval(&bound);
            let y = mlp.forward(&fw, tape.constant(x.clone()))?;
            Ok(y.tanh().sum())
        });
        let err = finite_difference_check(f, &point, 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
