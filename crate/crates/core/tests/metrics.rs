use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use tactis_core::metrics::{
    crps, crps_naive, crps_per_series, crps_sum, energy_score, mean_std, wasserstein_1d, ForecastSamples,
};
use tactis_core::rng::RngStream;

#[test]
fn sorted_crps_matches_double_sum() {
    let mut rng = RngStream::from_seed(1);
    for case in 0..100 {
        let s = rng.random_range(1..60);
        let scale = 10f64.powi(rng.random_range(-3..4));
        let samples: Vec<f64> = (0..s).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let obs = scale * rng.random_range(-3.0..3.0);
        let fast = crps(&samples, obs).unwrap();
        let slow = crps_naive(&samples, obs).unwrap();
        assert!(
            (fast - slow).abs() <= 1e-12 * slow.abs().max(1.0),
            "case {case}: {fast} vs {slow}"
        );
    }
}

fn normal_forecast(rng: &mut RngStream, s: usize, n: usize, t: usize) -> ForecastSamples {
    let values = (0..s * n * t).map(|_| rng.sample(StandardNormal)).collect();
    ForecastSamples::new(s, (0..n).collect(), (0..t).map(|j| j as f64).collect(), values).unwrap()
}

#[test]
fn perfect_forecast_scores_zero() {
    let truth = [0.3, -1.2, 4.0, 2.5, 0.0, 7.0];
    let s = 20;
    let f = ForecastSamples::new(s, vec![0, 1], vec![0.0, 1.0, 2.0], truth.repeat(s)).unwrap();
    assert_eq!(energy_score(&f, &truth).unwrap(), 0.0);
    assert!(crps_sum(&f, &truth).unwrap().abs() < 1e-12);
    assert!(crps_per_series(&f, &truth).unwrap().iter().all(|c| c.abs() < 1e-12));
}

#[test]
fn energy_score_of_a_scalar_is_crps() {
    let mut rng = RngStream::from_seed(2);
    for _ in 0..100 {
        let s = rng.random_range(1..50);
        let f = normal_forecast(&mut rng, s, 1, 1);
        let obs = rng.random_range(-2.0..2.0);
        let es = energy_score(&f, &[obs]).unwrap();
        let c = crps(&f.values, obs).unwrap();
        assert!((es - c).abs() < 1e-12, "{es} vs {c}");
    }
}

#[test]
fn wasserstein_between_uniform_and_slightly_skewed_beta() {
    let mut rng = RngStream::from_seed(3);
    let beta = Beta::new(1.031, 0.969).unwrap();
    let distances: Vec<f64> = (0..50)
        .map(|_| {
            let u: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..1000).map(|_| beta.sample(&mut rng)).collect();
            wasserstein_1d(&u, &b).unwrap()
        })
        .collect();
    let (mean, _) = mean_std(&distances);
    assert!((mean - 0.017).abs() <= 0.005, "mean distance {mean}");
}

#[test]
fn wasserstein_of_point_masses_is_their_distance() {
    assert_eq!(wasserstein_1d(&[0.25], &[1.0]).unwrap(), 0.75);
    assert_eq!(wasserstein_1d(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 0.0);
    // Half the mass moves by 2.
    assert_eq!(wasserstein_1d(&[0.0, 0.0], &[0.0, 2.0]).unwrap(), 1.0);
}

/// Bivariate normal draws with correlation `rho`, `S × 2 × 1`.
fn correlated(rng: &mut RngStream, s: usize, rho: f64) -> Vec<f64> {
    let c = (1.0 - rho * rho).sqrt();
    (0..s)
        .flat_map(|_| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            [a, rho * a + c * b]
        })
        .collect()
}

#[test]
fn shuffling_across_series_keeps_marginal_scores_but_hurts_joint_ones() {
    let mut rng = RngStream::from_seed(4);
    let s = 200;
    let rho = 0.9;
    let (mut es_joint, mut es_shuf, mut cs_joint, mut cs_shuf) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..100 {
        let truth = correlated(&mut rng, 1, rho);
        let values = correlated(&mut rng, s, rho);
        let joint = ForecastSamples::new(s, vec![0, 1], vec![0.0], values.clone()).unwrap();
        // Independent reordering of the second series' draws breaks the dependence.
        let mut second: Vec<f64> = values.iter().skip(1).step_by(2).copied().collect();
        second.shuffle(&mut rng);
        let shuffled: Vec<f64> = values
            .iter()
            .step_by(2)
            .zip(&second)
            .flat_map(|(&a, &b)| [a, b])
            .collect();
        let shuf = ForecastSamples::new(s, vec![0, 1], vec![0.0], shuffled).unwrap();

        let per_joint = crps_per_series(&joint, &truth).unwrap();
        let per_shuf = crps_per_series(&shuf, &truth).unwrap();
        for (a, b) in per_joint.iter().zip(&per_shuf) {
            assert!((a - b).abs() < 1e-12);
        }
        es_joint += energy_score(&joint, &truth).unwrap();
        es_shuf += energy_score(&shuf, &truth).unwrap();
        cs_joint += crps_sum(&joint, &truth).unwrap();
        cs_shuf += crps_sum(&shuf, &truth).unwrap();
    }
    assert!(es_joint < es_shuf, "energy {es_joint} vs {es_shuf}");
    assert!(cs_joint < cs_shuf, "crps-sum {cs_joint} vs {cs_shuf}");
}

#[test]
fn scores_reject_malformed_input() {
    let f = ForecastSamples::new(0, vec![0], vec![0.0], Vec::new()).unwrap();
    assert!(energy_score(&f, &[1.0]).is_err());
    let f = ForecastSamples::new(2, vec![0], vec![0.0], vec![1.0, 2.0]).unwrap();
    assert!(crps_sum(&f, &[1.0, 2.0]).is_err());
    assert!(ForecastSamples::new(2, vec![0], vec![0.0], vec![1.0]).is_err());
    assert!(wasserstein_1d(&[], &[1.0]).is_err());
}
