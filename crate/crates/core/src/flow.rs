//! Deep sigmoidal flow marginals.
//!
//! Each layer maps `y` to `S(y) = Σ_k w_k σ(a_k y + b_k)`. Inner layers pass
//! on `logit(S)`; the last layer keeps `S` itself, so the composition is a
//! CDF onto `(0, 1)`. Everything is evaluated in log-space: with `Σ w = 1`,
//! `log S = LSE(log w + log σ(t))` and `log(1 - S) = LSE(log w + log σ(-t))`.

use alloc::vec::Vec;

use crate::autodiff::{log_sigmoid, log_sum_exp, softplus, Tensor, TensorError, Var};
use crate::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowConfig {
    pub layers: usize,
    pub hidden: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { layers: 2, hidden: 16 }
    }
}

impl FlowConfig {
    /// Raw network outputs per token: `a`, `b` and mixture logits for every layer.
    pub fn raw_size(&self) -> usize {
        3 * self.hidden * self.layers
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layers == 0 || self.hidden == 0 {
            return Err(ModelError::Config("flow.layers and flow.hidden_dim must be positive"));
        }
        Ok(())
    }
}

/// Constrained parameters of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowLayer {
    /// Slopes, strictly positive.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Log mixture weights, normalized.
    pub log_w: Vec<f64>,
}

/// Parameters of one marginal flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowParams {
    pub layers: Vec<FlowLayer>,
}

/// Bisection steps after bracketing.
pub const BISECTION_STEPS: usize = 80;
const MAX_DOUBLINGS: usize = 1100;

fn log_softmax(raw: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(raw);
    raw.iter().map(|r| r - lse).collect()
}

impl FlowParams {
    /// Applies softplus to the slopes and softmax to the mixture logits.
    pub fn from_raw(raw: &[f64], config: FlowConfig) -> Result<Self, ModelError> {
        if raw.len() != config.raw_size() {
            return Err(ModelError::Shape("raw flow parameters have the wrong length"));
        }
        let h = config.hidden;
        let layers = raw
            .chunks(3 * h)
            .map(|c| FlowLayer {
                a: c[..h].iter().map(|&r| softplus(r)).collect(),
                b: c[h..2 * h].to_vec(),
                log_w: log_softmax(&c[2 * h..]),
            })
            .collect();
        Ok(FlowParams { layers })
    }

    /// One layer, one unit: `F(x) = σ(a x + b)`.
    pub fn single_sigmoid(a: f64, b: f64) -> Self {
        FlowParams {
            layers: alloc::vec![FlowLayer {
                a: alloc::vec![a],
                b: alloc::vec![b],
                log_w: alloc::vec![0.0],
            }],
        }
    }

    /// `(F(x), log f(x))`.
    pub fn cdf_and_log_pdf(&self, x: f64) -> (f64, f64) {
        let mut y = x;
        let mut log_det = 0.0;
        let last = self.layers.len() - 1;
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        let mut der = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            pos.clear();
            neg.clear();
            der.clear();
            for k in 0..layer.a.len() {
                let t = layer.a[k] * y + layer.b[k];
                let (lp, ln) = (log_sigmoid(t), log_sigmoid(-t));
                pos.push(layer.log_w[k] + lp);
                neg.push(layer.log_w[k] + ln);
                der.push(layer.log_w[k] + libm::log(layer.a[k]) + lp + ln);
            }
            let log_s = log_sum_exp(&pos);
            log_det += log_sum_exp(&der);
            if i == last {
                return (libm::exp(log_s), log_det);
            }
            let log_1ms = log_sum_exp(&neg);
            y = log_s - log_1ms;
            log_det -= log_s + log_1ms;
        }
        unreachable!("a flow has at least one layer")
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.cdf_and_log_pdf(x).0
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        self.cdf_and_log_pdf(x).1
    }

    pub fn pdf(&self, x: f64) -> f64 {
        libm::exp(self.log_pdf(x))
    }

    /// Solves `F(x) = u` by outward doubling of `[-1, 1]` and bisection.
    pub fn inverse_cdf(&self, u: f64) -> Result<f64, ModelError> {
        if !(u > 0.0 && u < 1.0) {
            return Err(ModelError::OutsideUnitInterval(u));
        }
        let (mut lo, mut hi) = (-1.0f64, 1.0f64);
        for _ in 0..MAX_DOUBLINGS {
            if self.cdf(lo) <= u {
                break;
            }
            lo *= 2.0;
        }
        for _ in 0..MAX_DOUBLINGS {
            if self.cdf(hi) >= u {
                break;
            }
            hi *= 2.0;
        }
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(ModelError::Invalid(alloc::format!("no finite bracket for u = {u}")));
        }
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if self.cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Recorded flow for a batch of tokens: `raw` is `[K, raw_size]`, `x` has
/// `K` entries. Returns `F(x)` and `log f(x)`, both of shape `[K]`.
pub fn flow_forward<'t>(raw: Var<'t>, x: Var<'t>, config: FlowConfig) -> Result<(Var<'t>, Var<'t>), TensorError> {
    let k = x.numel();
    let h = config.hidden;
    let mut y = x.reshape(&[k, 1])?;
    let mut log_det: Option<Var<'t>> = None;
    for layer in 0..config.layers {
        let off = 3 * h * layer;
        let a = raw.slice(1, off, h)?.softplus();
        let b = raw.slice(1, off + h, h)?;
        let log_w = raw.slice(1, off + 2 * h, h)?.log_softmax();
        let t = a.mul(y)?.add(b)?;
        let (lp, ln) = (t.log_sigmoid(), t.neg().log_sigmoid());
        let log_s = log_w.add(lp)?.log_sum_exp();
        let der = log_w.add(a.log())?.add(lp)?.add(ln)?.log_sum_exp();
        let mut step = der;
        if layer + 1 == config.layers {
            let total = match log_det {
                Some(d) => d.add(step)?,
                None => step,
            };
            return Ok((log_s.exp(), total));
        }
        let log_1ms = log_w.add(ln)?.log_sum_exp();
        step = step.sub(log_s)?.sub(log_1ms)?;
        log_det = Some(match log_det {
            Some(d) => d.add(step)?,
            None => step,
        });
        y = log_s.sub(log_1ms)?.reshape(&[k, 1])?;
    }
    Err(TensorError::InvalidArgument {
        op: "flow_forward",
        reason: "a flow needs at least one layer",
    })
}

/// Constrained parameters of row `k` of a raw parameter matrix.
pub fn params_of_row(raw: &Tensor, row: usize, config: FlowConfig) -> Result<FlowParams, ModelError> {
    let p = config.raw_size();
    let data = raw
        .data()
        .get(row * p..(row + 1) * p)
        .ok_or(ModelError::Shape("row out of range"))?;
    FlowParams::from_raw(data, config)
}
