use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use tactis_core::flow::{FlowConfig, FlowParams};
use tactis_core::rng::RngStream;

fn random_flow(rng: &mut RngStream) -> FlowParams {
    let config = FlowConfig {
        layers: rng.random_range(1..4),
        hidden: rng.random_range(1..17),
    };
    let scale = rng.random_range(0.1..3.0);
    let raw: Vec<f64> = (0..config.raw_size())
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    FlowParams::from_raw(&raw, config).unwrap()
}

#[test]
fn ten_thousand_random_roundtrips() {
    let mut rng = RngStream::from_seed(8);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let flow = random_flow(&mut rng);
        // Mix the bulk with the far tails.
        let u = if rng.random_bool(0.2) {
            10f64.powf(-rng.random_range(3.0..9.0))
        } else {
            rng.random_range(1e-3..1.0 - 1e-3)
        };
        let x = flow.inverse_cdf(u).unwrap();
        assert!(x.is_finite());
        worst = worst.max((flow.cdf(x) - u).abs());
    }
    assert!(worst < 1e-6, "max |F(F⁻¹(u)) - u| = {worst}");
    assert!(start.elapsed().as_secs_f64() < 10.0, "{:?}", start.elapsed());
}

#[test]
fn inverse_is_monotone() {
    let mut rng = RngStream::from_seed(9);
    for _ in 0..50 {
        let flow = random_flow(&mut rng);
        let xs: Vec<f64> = (1..100).map(|k| flow.inverse_cdf(k as f64 / 100.0).unwrap()).collect();
        assert!(xs.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn boundary_and_invalid_levels_are_rejected() {
    let flow = FlowParams::single_sigmoid(1.0, 0.0);
    for u in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
        assert!(flow.inverse_cdf(u).is_err(), "{u}");
    }
}

#[test]
fn logistic_inverse_is_the_logit() {
    let flow = FlowParams::single_sigmoid(2.0, -1.0);
    for u in [1e-6f64, 0.1, 0.5, 0.9, 1.0 - 1e-6] {
        let expected = ((u / (1.0 - u)).ln() + 1.0) / 2.0;
        assert!((flow.inverse_cdf(u).unwrap() - expected).abs() < 1e-9);
    }
}
