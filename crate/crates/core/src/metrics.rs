//! Proper scoring rules and distribution distances.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::TimeSeriesBatch;
use crate::model::Model;
use crate::rng::RngStream;
use crate::ModelError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("empty sample set")]
    Empty,
}

/// Joint draws `S × n × T` for `n` series over `T` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSamples {
    pub num_samples: usize,
    pub series_ids: Vec<usize>,
    pub timestamps: Vec<f64>,
    /// Sample-major, then series, then step.
    pub values: Vec<f64>,
}

impl ForecastSamples {
    pub fn new(
        num_samples: usize,
        series_ids: Vec<usize>,
        timestamps: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self, MetricError> {
        let expected = num_samples * series_ids.len() * timestamps.len();
        if values.len() != expected {
            return Err(MetricError::Shape {
                expected,
                got: values.len(),
            });
        }
        Ok(ForecastSamples {
            num_samples,
            series_ids,
            timestamps,
            values,
        })
    }

    pub fn num_series(&self) -> usize {
        self.series_ids.len()
    }

    pub fn num_steps(&self) -> usize {
        self.timestamps.len()
    }

    /// The `n × T` matrix of sample `s`.
    pub fn sample(&self, s: usize) -> &[f64] {
        let m = self.num_series() * self.num_steps();
        &self.values[s * m..(s + 1) * m]
    }

    pub fn get(&self, s: usize, series: usize, step: usize) -> f64 {
        self.sample(s)[series * self.num_steps() + step]
    }

    /// Draws of one cell across samples.
    pub fn cell(&self, series: usize, step: usize) -> Vec<f64> {
        (0..self.num_samples).map(|s| self.get(s, series, step)).collect()
    }

    fn check(&self, observations: &[f64]) -> Result<(), MetricError> {
        let m = self.num_series() * self.num_steps();
        if observations.len() != m {
            return Err(MetricError::Shape {
                expected: m,
                got: observations.len(),
            });
        }
        if self.num_samples == 0 {
            return Err(MetricError::Empty);
        }
        Ok(())
    }
}

/// Empirical CRPS, `mean |X - x| - 1/(2S²) Σ |X - X'|`, by sorting.
///
/// A single sample is a point forecast and scores its absolute error.
pub fn crps(samples: &[f64], observation: f64) -> Result<f64, MetricError> {
    let s = samples.len();
    if s == 0 {
        return Err(MetricError::Empty);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let sf = s as f64;
    let abs_err = sorted.iter().map(|x| (x - observation).abs()).sum::<f64>() / sf;
    // Σ_{i<j} (x_(j) - x_(i)) = Σ_i x_(i) (2i - S + 1)
    let spread: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| x * (2.0 * i as f64 - sf + 1.0))
        .sum();
    Ok(abs_err - spread / (sf * sf))
}

/// Quadratic-time CRPS straight from the double sum.
pub fn crps_naive(samples: &[f64], observation: f64) -> Result<f64, MetricError> {
    let s = samples.len();
    if s == 0 {
        return Err(MetricError::Empty);
    }
    let sf = s as f64;
    let abs_err = samples.iter().map(|x| (x - observation).abs()).sum::<f64>() / sf;
    let mut pair = 0.0;
    for a in samples {
        for b in samples {
            pair += (a - b).abs();
        }
    }
    Ok(abs_err - pair / (2.0 * sf * sf))
}

/// Mean CRPS of every series over the forecast steps.
pub fn crps_per_series(samples: &ForecastSamples, observations: &[f64]) -> Result<Vec<f64>, MetricError> {
    samples.check(observations)?;
    let t = samples.num_steps();
    (0..samples.num_series())
        .map(|i| {
            let mut total = 0.0;
            for j in 0..t {
                total += crps(&samples.cell(i, j), observations[i * t + j])?;
            }
            Ok(total / t as f64)
        })
        .collect()
}

/// CRPS of the across-series sum, averaged over steps. `observations` is `n × T`.
pub fn crps_sum(samples: &ForecastSamples, observations: &[f64]) -> Result<f64, MetricError> {
    samples.check(observations)?;
    let (n, t) = (samples.num_series(), samples.num_steps());
    let mut total = 0.0;
    for j in 0..t {
        let sums: Vec<f64> = (0..samples.num_samples)
            .map(|s| (0..n).map(|i| samples.get(s, i, j)).sum())
            .collect();
        let obs: f64 = (0..n).map(|i| observations[i * t + j]).sum();
        total += crps(&sums, obs)?;
    }
    Ok(total / t as f64)
}

fn frobenius(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Energy score with `β = 1` and the Frobenius norm over the `n × T` matrix.
pub fn energy_score(samples: &ForecastSamples, observations: &[f64]) -> Result<f64, MetricError> {
    samples.check(observations)?;
    let s = samples.num_samples;
    let sf = s as f64;
    let fit = (0..s).map(|k| frobenius(samples.sample(k), observations)).sum::<f64>() / sf;
    let mut pair = 0.0;
    for a in 0..s {
        for b in a + 1..s {
            pair += frobenius(samples.sample(a), samples.sample(b));
        }
    }
    Ok(fit - pair / (sf * sf))
}

/// Order-1 Wasserstein distance between two empirical distributions:
/// `∫ |F_a - F_b|` evaluated exactly over the merged support.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = xa[0].min(xb[0]);
    let mut total = 0.0;
    while i < xa.len() || j < xb.len() {
        let next = match (xa.get(i), xb.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (next - prev) * (i as f64 / na - j as f64 / nb).abs();
        while i < xa.len() && xa[i] == next {
            i += 1;
        }
        while j < xb.len() && xb[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let (mut va, mut vb) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / libm::sqrt(va * vb)
}

/// One named score, with a per-series breakdown when it has one.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub metric: String,
    pub value: f64,
    pub per_series: Vec<(usize, f64)>,
}

/// CRPS (mean over series and steps), CRPS-Sum and energy score.
pub fn score_forecast(samples: &ForecastSamples, observations: &[f64]) -> Result<Vec<ScoreReport>, MetricError> {
    let per = crps_per_series(samples, observations)?;
    let mean = per.iter().sum::<f64>() / per.len().max(1) as f64;
    Ok(vec![
        ScoreReport {
            metric: "crps".into(),
            value: mean,
            per_series: samples.series_ids.iter().copied().zip(per).collect(),
        },
        ScoreReport {
            metric: "crps_sum".into(),
            value: crps_sum(samples, observations)?,
            per_series: Vec::new(),
        },
        ScoreReport {
            metric: "energy".into(),
            value: energy_score(samples, observations)?,
            per_series: Vec::new(),
        },
    ])
}

/// Distances of the copula marginals from `U[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformityReport {
    /// One distance per missing variable, in token order.
    pub distances: Vec<f64>,
    pub samples_per_variable: usize,
}

impl UniformityReport {
    pub fn mean(&self) -> f64 {
        self.distances.iter().sum::<f64>() / self.distances.len().max(1) as f64
    }

    pub fn max(&self) -> f64 {
        self.distances.iter().copied().fold(0.0, f64::max)
    }
}

pub const UNIFORMITY_SAMPLES: usize = 1000;

/// Draws `num_samples` copula samples (before the inverse CDF) for the missing
/// tokens of a standardized window and compares each marginal with an
/// equally large uniform draw.
pub fn copula_uniformity_report(
    model: &Model,
    window: &TimeSeriesBatch,
    num_samples: usize,
    rng: &mut RngStream,
) -> Result<UniformityReport, ModelError> {
    let draws = model.sample(window, num_samples, None, rng)?;
    let q = draws.missing.len();
    let mut distances = Vec::with_capacity(q);
    for k in 0..q {
        let u: Vec<f64> = (0..num_samples).map(|s| draws.u[s * q + k]).collect();
        let reference: Vec<f64> = (0..num_samples).map(|_| rng.random()).collect();
        distances.push(wasserstein_1d(&u, &reference)?);
    }
    Ok(UniformityReport {
        distances,
        samples_per_variable: num_samples,
    })
}

/// Mean and (population) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let v = values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, libm::sqrt(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn forecast(s: usize, n: usize, t: usize, values: Vec<f64>) -> ForecastSamples {
        ForecastSamples::new(s, (0..n).collect(), (0..t).map(|x| x as f64).collect(), values).unwrap()
    }

    #[test]
    fn crps_examples() {
        assert_eq!(crps(&[2.0, 2.0, 2.0], 2.0).unwrap(), 0.0);
        assert_eq!(crps(&[0.0, 1.0], 0.0).unwrap(), 0.25);
        assert_eq!(crps_naive(&[0.0, 1.0], 0.0).unwrap(), 0.25);
        assert_eq!(crps(&[1.0], -0.5).unwrap(), 1.5);
        assert!(crps(&[], 0.0).is_err());
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein_1d(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(wasserstein_1d(&[0.3, 0.1], &[0.1, 0.3]).unwrap(), 0.0);
        // Mass 1/2 moves by 2 and mass 1/2 stays.
        assert!((wasserstein_1d(&[0.0, 1.0], &[0.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(wasserstein_1d(&[], &[1.0]).is_err());
    }

    #[test]
    fn perfect_forecasts_score_zero() {
        let obs = vec![1.0, 2.0, 3.0, 4.0];
        let f = forecast(3, 2, 2, obs.iter().cycle().take(12).copied().collect());
        assert_eq!(energy_score(&f, &obs).unwrap(), 0.0);
        assert_eq!(crps_sum(&f, &obs).unwrap(), 0.0);
    }

    #[test]
    fn point_forecast_energy_is_distance() {
        let f = forecast(1, 2, 1, vec![3.0, 4.0]);
        assert_eq!(energy_score(&f, &[0.0, 0.0]).unwrap(), 5.0);
    }

    #[test]
    fn crps_sum_of_one_series_is_mean_crps() {
        let mut rng = RngStream::from_seed(0);
        let values: Vec<f64> = (0..5 * 3).map(|_| rng.random()).collect();
        let obs = vec![0.2, 0.5, 0.9];
        let f = forecast(5, 1, 3, values);
        let per = crps_per_series(&f, &obs).unwrap()[0];
        assert!((crps_sum(&f, &obs).unwrap() - per).abs() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        let f = forecast(2, 1, 2, vec![0.0; 4]);
        assert!(matches!(crps_sum(&f, &[0.0]), Err(MetricError::Shape { .. })));
        let g = forecast(0, 1, 1, vec![]);
        assert!(matches!(energy_score(&g, &[0.0]), Err(MetricError::Empty)));
    }

    proptest! {
        #[test]
        fn fast_crps_matches_naive(xs in proptest::collection::vec(-10.0f64..10.0, 2..60), y in -10.0f64..10.0) {
            let (a, b) = (crps(&xs, y).unwrap(), crps_naive(&xs, y).unwrap());
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(a >= -1e-12);
        }

        #[test]
        fn energy_of_scalars_is_crps(xs in proptest::collection::vec(-10.0f64..10.0, 2..40), y in -10.0f64..10.0) {
            let f = forecast(xs.len(), 1, 1, xs.clone());
            prop_assert!((energy_score(&f, &[y]).unwrap() - crps(&xs, y).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn wasserstein_is_a_metric(
            a in proptest::collection::vec(-5.0f64..5.0, 1..30),
            b in proptest::collection::vec(-5.0f64..5.0, 1..30),
            c in proptest::collection::vec(-5.0f64..5.0, 1..30),
        ) {
            let ab = wasserstein_1d(&a, &b).unwrap();
            prop_assert!((ab - wasserstein_1d(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!(ab <= wasserstein_1d(&a, &c).unwrap() + wasserstein_1d(&c, &b).unwrap() + 1e-12);
            prop_assert!(wasserstein_1d(&a, &a).unwrap() == 0.0);
        }

        #[test]
        fn energy_is_series_permutation_invariant(seed in 0u64..1000) {
            let mut rng = RngStream::from_seed(seed);
            let (s, n, t) = (4, 3, 2);
            let values: Vec<f64> = (0..s * n * t).map(|_| rng.random_range(-1.0..1.0)).collect();
            let obs: Vec<f64> = (0..n * t).map(|_| rng.random_range(-1.0..1.0)).collect();
            let perm = [2usize, 0, 1];
            let pv: Vec<f64> = (0..s).flat_map(|k| perm.iter().flat_map(move |&i| (0..t).map(move |j| (k, i, j))))
                .map(|(k, i, j)| values[(k * n + i) * t + j]).collect();
            let po: Vec<f64> = perm.iter().flat_map(|&i| (0..t).map(move |j| (i, j))).map(|(i, j)| obs[i * t + j]).collect();
            let a = energy_score(&forecast(s, n, t, values), &obs).unwrap();
            let b = energy_score(&forecast(s, n, t, pv), &po).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
