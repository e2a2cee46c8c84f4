mod common;

use rand::Rng;
use tactis_core::autodiff::{finite_difference_check, scalar_fn, Tape, Tensor};
use tactis_core::data::TimeSeriesBatch;
use tactis_core::encoder::EncoderVariant;
use tactis_core::model::Model;
use tactis_core::nn::Forward;
use tactis_core::rng::RngStream;
use tactis_core::ModelError;

use common::{noise_window, perturbed_model, small_config};

fn tensor_err(e: ModelError) -> tactis_core::autodiff::TensorError {
    match e {
        ModelError::Tensor(t) => t,
        other => panic!("{other}"),
    }
}

fn encoder_gradient_error(variant: EncoderVariant) -> f64 {
    let mut config = small_config(2);
    config.encoder.variant = variant;
    let model = perturbed_model(config, 11, 0.2);
    let window = noise_window(2, 6, 2, 5);
    let mut rng = RngStream::from_seed(6);
    let probe: Vec<f64> = (0..2 * 6 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let point = Tensor::vector(model.params().flatten());
    let f = scalar_fn(move |tape, p| {
        let bound = model.params().bind_flat(p)?;
        let fw = Forward::eval(&bound);
        let z = model.encode(&fw, &[&window]).map_err(tensor_err)?;
        let w = tape.constant(Tensor::new(vec![1, 12, 4], probe.clone())?);
        Ok(z.mul(w)?.sum())
    });
    finite_difference_check(f, &point, 1e-5).unwrap()
}

#[test]
fn standard_encoder_matches_finite_differences() {
    let err = encoder_gradient_error(EncoderVariant::Standard);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn temporal_encoder_matches_finite_differences() {
    let err = encoder_gradient_error(EncoderVariant::Temporal);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn missing_values_never_reach_the_encodings() {
    for variant in [EncoderVariant::Standard, EncoderVariant::Temporal] {
        let mut config = small_config(3);
        config.encoder.variant = variant;
        let model = perturbed_model(config, 2, 0.2);
        let a = noise_window(3, 5, 2, 8);
        let mut values = a.values().to_vec();
        values[4] = 1e6;
        values[13] = -3.0;
        let b = TimeSeriesBatch::new(3, 5, values, a.mask().to_vec(), Vec::new(), 0, a.timestamps().clone()).unwrap();
        let encode = |w: &TimeSeriesBatch| {
            let tape = Tape::new();
            let bound = model.params().bind(&tape, false);
            model.encode(&Forward::eval(&bound), &[w]).unwrap().to_vec()
        };
        assert_eq!(encode(&a), encode(&b));
    }
}

/// Matmul work and tape size of one encoder pass over `n` series of `l` steps.
fn cost(variant: EncoderVariant, n: usize, l: usize) -> (u64, usize) {
    let mut config = small_config(n);
    config.encoder.variant = variant;
    let model = Model::new(config, &mut RngStream::from_seed(0)).unwrap();
    let w = noise_window(n, l, 1, 1);
    let tape = Tape::new();
    let bound = model.params().bind(&tape, false);
    model.encode(&Forward::eval(&bound), &[&w]).unwrap();
    let s = tape.stats();
    (s.matmul_flops, s.floats)
}

#[test]
fn temporal_attention_cost_is_bounded_by_n2l_plus_nl2() {
    let l = 12;
    let mut ratios = Vec::new();
    for n in [2, 4, 8, 16] {
        let (temporal, _) = cost(EncoderVariant::Temporal, n, l);
        let (standard, _) = cost(EncoderVariant::Standard, n, l);
        let (nf, lf) = (n as f64, l as f64);
        // Attention products plus the per-token linear maps.
        let bound = nf * nf * lf + nf * lf * lf + nf * lf;
        ratios.push(temporal as f64 / bound);
        if n >= 4 {
            assert!(temporal < standard, "n={n}: temporal {temporal} vs standard {standard}");
        }
    }
    let (lo, hi) = ratios
        .iter()
        .fold((f64::MAX, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    assert!(hi / lo < 2.0, "flops per n²l + nl² unit drift: {ratios:?}");
}

#[test]
fn temporal_memory_grows_subquadratically() {
    let l = 12;
    let floats: Vec<(usize, usize)> = [4, 8, 16]
        .iter()
        .map(|&n| {
            (
                cost(EncoderVariant::Temporal, n, l).1,
                cost(EncoderVariant::Standard, n, l).1,
            )
        })
        .collect();
    // n·l grows fourfold from the first to the last size.
    let temporal = floats[2].0 as f64 / floats[0].0 as f64;
    let standard = floats[2].1 as f64 / floats[0].1 as f64;
    assert!(temporal < 0.6 * 16.0, "temporal growth {temporal}");
    assert!(temporal < standard, "temporal {temporal} vs standard {standard}");
    for pair in floats.windows(2) {
        let step = pair[1].0 as f64 / pair[0].0 as f64;
        assert!(step < 4.0, "doubling n multiplied memory by {step}");
    }
}
