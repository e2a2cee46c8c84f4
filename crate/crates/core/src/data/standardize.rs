use alloc::vec::Vec;

use super::{DataError, TimeSeriesBatch};

/// Per-series affine map applied by [`standardize`].
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationState {
    pub mean: Vec<f64>,
    /// Population variance of the observed tokens; 1 for constant series.
    pub variance: Vec<f64>,
}

impl StandardizationState {
    pub fn scale(&self, series: usize) -> f64 {
        libm::sqrt(self.variance[series])
    }

    /// Maps standardized values of every series back to the original scale.
    pub fn destandardize(&self, batch: &TimeSeriesBatch) -> TimeSeriesBatch {
        let mut out = batch.clone();
        let l = batch.len();
        for i in 0..batch.num_series() {
            let (m, s) = (self.mean[i], self.scale(i));
            for v in &mut out.values_mut()[i * l..(i + 1) * l] {
                *v = destandardize_value(*v, m, s);
            }
        }
        out
    }
}

#[inline]
pub fn destandardize_value(x: f64, mean: f64, scale: f64) -> f64 {
    scale * x + mean
}

/// Standardizes every series with the mean and variance of its observed
/// tokens. Missing tokens are transformed with the same map.
pub fn standardize(batch: &TimeSeriesBatch) -> Result<(TimeSeriesBatch, StandardizationState), DataError> {
    let (n, l) = (batch.num_series(), batch.len());
    let mut mean = Vec::with_capacity(n);
    let mut variance = Vec::with_capacity(n);
    let mut out = batch.clone();
    for i in 0..n {
        let obs: Vec<f64> = (0..l)
            .filter(|&j| batch.is_observed(i, j))
            .map(|j| batch.value(i, j))
            .collect();
        if obs.is_empty() {
            return Err(DataError::NoObservedTokens { series: i });
        }
        let m = obs.iter().sum::<f64>() / obs.len() as f64;
        let mut v = obs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / obs.len() as f64;
        if v == 0.0 {
            v = 1.0;
        }
        let s = libm::sqrt(v);
        for x in &mut out.values_mut()[i * l..(i + 1) * l] {
            *x = (*x - m) / s;
        }
        mean.push(m);
        variance.push(v);
    }
    Ok((out, StandardizationState { mean, variance }))
}
