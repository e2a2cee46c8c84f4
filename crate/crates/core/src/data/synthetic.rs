use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{DataError, TimeSeriesBatch};
use crate::rng::RngStream;

/// Latent log-variance `h` and level `x` of a stochastic volatility path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvState {
    pub h: f64,
    pub x: f64,
}

/// Level process `x_t = x_{t-1} + y_t` with `y_t ~ N(0, exp h_t)` and an
/// AR(1) log-variance `h_t ~ N(mu + phi (h_{t-1} - mu), sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StochasticVolatility {
    pub mu: f64,
    pub phi: f64,
    pub sigma: f64,
}

impl StochasticVolatility {
    pub fn new(mu: f64, phi: f64, sigma: f64) -> Result<Self, DataError> {
        if !(phi.abs() < 1.0) {
            return Err(DataError::InvalidParameter(format!("|phi| must be < 1, got {phi}")));
        }
        if !(sigma > 0.0) || !mu.is_finite() {
            return Err(DataError::InvalidParameter(format!(
                "need sigma > 0 and finite mu, got sigma={sigma}, mu={mu}"
            )));
        }
        Ok(StochasticVolatility { mu, phi, sigma })
    }

    /// Draws `h_0` from the stationary law of the log-variance.
    pub fn initial_state(&self, x: f64, rng: &mut RngStream) -> SvState {
        let sd = self.sigma / libm::sqrt(1.0 - self.phi * self.phi);
        let z: f64 = rng.sample(StandardNormal);
        SvState { h: self.mu + sd * z, x }
    }

    pub fn step(&self, state: SvState, rng: &mut RngStream) -> SvState {
        let zh: f64 = rng.sample(StandardNormal);
        let zy: f64 = rng.sample(StandardNormal);
        let h = self.mu + self.phi * (state.h - self.mu) + self.sigma * zh;
        let y = libm::exp(0.5 * h) * zy;
        SvState { h, x: state.x + y }
    }

    /// `length` levels starting with `start.x`, plus the final state.
    pub fn simulate(&self, start: SvState, length: usize, rng: &mut RngStream) -> (Vec<f64>, SvState) {
        let mut out = Vec::with_capacity(length);
        let mut s = start;
        if length > 0 {
            out.push(s.x);
        }
        for _ in 1..length {
            s = self.step(s, rng);
            out.push(s.x);
        }
        (out, s)
    }
}

/// Univariate stochastic volatility path with `x_1 = 1`.
pub fn generate_stochastic_volatility(
    length: usize,
    mu: f64,
    phi: f64,
    sigma: f64,
    rng: &mut RngStream,
) -> Result<TimeSeriesBatch, DataError> {
    let sv = StochasticVolatility::new(mu, phi, sigma)?;
    let start = sv.initial_state(1.0, rng);
    let (values, _) = sv.simulate(start, length, rng);
    TimeSeriesBatch::from_rows(&[values])
}

/// Cholesky factor of the equicorrelation matrix, or `None` when it is not
/// positive definite.
fn equicorrelation_cholesky(n: usize, rho: f64) -> Option<Vec<f64>> {
    let a = |i: usize, j: usize| if i == j { 1.0 } else { rho };
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let d = a(i, i) - s;
                if !(d > 1e-12) {
                    return None;
                }
                l[i * n + i] = libm::sqrt(d);
            } else {
                l[i * n + j] = (a(i, j) - s) / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// `n_series` unit-variance Gaussian series with pairwise correlation `rho`,
/// independent across time steps. Their copula is Gaussian with parameter `rho`.
pub fn generate_correlated_gaussian(
    n_series: usize,
    length: usize,
    correlation: f64,
    rng: &mut RngStream,
) -> Result<TimeSeriesBatch, DataError> {
    if !(correlation > -1.0 && correlation < 1.0) {
        return Err(DataError::InvalidParameter(format!(
            "correlation must lie in (-1, 1), got {correlation}"
        )));
    }
    let n = n_series;
    let chol = equicorrelation_cholesky(n, correlation).ok_or_else(|| {
        DataError::InvalidParameter(format!(
            "correlation matrix with rho={correlation} is degenerate for {n} series"
        ))
    })?;
    let mut rows = vec![vec![0.0; length]; n];
    let mut z = vec![0.0; n];
    for t in 0..length {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for i in 0..n {
            rows[i][t] = (0..=i).map(|k| chol[i * n + k] * z[k]).sum();
        }
    }
    TimeSeriesBatch::from_rows(&rows)
}
