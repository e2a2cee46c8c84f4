mod common;

use tactis_core::autodiff::{Tape, Tensor};
use tactis_core::data::TimeSeriesBatch;
use tactis_core::flow::params_of_row;
use tactis_core::model::Model;
use tactis_core::nn::Forward;
use tactis_core::rng::RngStream;

use common::{noise_window, perturbed_model, small_config};

/// Encodings of the observed and missing tokens and the observed `u`s.
fn conditioning(model: &Model, w: &TimeSeriesBatch) -> (Tensor, Vec<f64>, Tensor) {
    let tape = Tape::new();
    let bound = model.params().bind(&tape, false);
    let f = Forward::eval(&bound);
    let z = model.encode(&f, &[w]).unwrap();
    let raw = model.marginal_params(&f, z).unwrap().value();
    let z = z.value();
    let d = z.shape()[2];
    let rows = |keep: bool| {
        let idx: Vec<usize> = (0..w.mask().len()).filter(|&t| w.mask()[t] == keep).collect();
        let data = idx
            .iter()
            .flat_map(|&t| z.data()[t * d..(t + 1) * d].to_vec())
            .collect();
        (idx.clone(), Tensor::new(vec![idx.len(), d], data).unwrap())
    };
    let (observed, z_obs) = rows(true);
    let (_, z_mis) = rows(false);
    let u_obs = observed
        .iter()
        .map(|&t| params_of_row(&raw, t, model.config.flow).unwrap().cdf(w.values()[t]))
        .collect();
    (z_obs, u_obs, z_mis)
}

/// Midpoint rule over `[0, 1]²` of the copula density of two missing tokens.
fn integrate(model: &Model, w: &TimeSeriesBatch, perm: &[usize], grid: usize) -> f64 {
    let (z_obs, u_obs, z_mis) = conditioning(model, w);
    let streams = grid * grid;
    let cache = model.copula().memory(model.params(), &z_obs, &u_obs, streams).unwrap();
    let mid = |k: usize| (k as f64 + 0.5) / grid as f64;
    let given: Vec<f64> = (0..streams).flat_map(|s| [mid(s / grid), mid(s % grid)]).collect();
    let (_, log_c) = model
        .copula()
        .walk(
            model.params(),
            cache,
            &z_mis,
            perm,
            Some(&given),
            &mut RngStream::from_seed(0),
        )
        .unwrap();
    log_c.iter().map(|l| l.exp()).sum::<f64>() / streams as f64
}

fn copula_model(seed: u64) -> Model {
    perturbed_model(small_config(2), seed, 0.5)
}

#[test]
fn two_variable_copula_integrates_to_one() {
    for seed in 0..3 {
        let model = copula_model(seed);
        let w = noise_window(2, 4, 1, 10 + seed);
        for perm in [[0, 1], [1, 0]] {
            let mass = integrate(&model, &w, &perm, 200);
            assert!((mass - 1.0).abs() < 1e-3, "seed {seed} perm {perm:?}: {mass}");
        }
    }
}

#[test]
fn copula_density_is_not_flat() {
    // Guards the quadrature test against a degenerate (independence) copula.
    let model = copula_model(1);
    let w = noise_window(2, 4, 1, 11);
    let (z_obs, u_obs, z_mis) = conditioning(&model, &w);
    let given = [0.05, 0.05, 0.05, 0.95];
    let cache = model.copula().memory(model.params(), &z_obs, &u_obs, 2).unwrap();
    let (_, log_c) = model
        .copula()
        .walk(
            model.params(),
            cache,
            &z_mis,
            &[0, 1],
            Some(&given),
            &mut RngStream::from_seed(0),
        )
        .unwrap();
    assert!((log_c[0] - log_c[1]).abs() > 1e-3, "{log_c:?}");
}

/// Kolmogorov–Smirnov statistic of a sample against `U[0, 1]`.
fn ks_uniform(mut u: Vec<f64>) -> f64 {
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    u.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).max((i + 1) as f64 / n - x))
        .fold(0.0, f64::max)
}

#[test]
fn first_permutation_element_is_uniform() {
    let model = copula_model(2);
    let w = noise_window(2, 4, 1, 12);
    let draws = 10_000;
    // 1% critical value of the one-sample KS statistic.
    let critical = 1.628 / (draws as f64).sqrt();
    for (perm, first) in [(vec![0, 1], 0), (vec![1, 0], 1)] {
        let d = model
            .sample(&w, draws, Some(perm), &mut RngStream::from_seed(3))
            .unwrap();
        let u: Vec<f64> = (0..draws).map(|s| d.u[s * 2 + first]).collect();
        let ks = ks_uniform(u);
        assert!(ks < critical, "KS {ks} vs {critical}");
    }
}

#[test]
fn mean_nll_over_all_permutations_is_nll_of_geometric_mean() {
    let model = perturbed_model(small_config(3), 4, 0.3);
    let w = noise_window(3, 3, 1, 13);
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let logs: Vec<f64> = perms.iter().map(|p| model.log_density(&w, p).unwrap()).collect();
    let mean_nll = -logs.iter().sum::<f64>() / 6.0;
    let product: f64 = logs.iter().map(|l| l.exp()).product();
    let geometric = product.powf(1.0 / 6.0);
    assert!(
        (mean_nll + geometric.ln()).abs() < 1e-10,
        "{mean_nll} vs {}",
        -geometric.ln()
    );
    // The permutations do give different densities before training.
    assert!(logs.iter().any(|l| (l - logs[0]).abs() > 1e-6));
}
