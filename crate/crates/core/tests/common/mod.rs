#![allow(dead_code)]

use rand::Rng;
use tactis_core::copula::CopulaConfig;
use tactis_core::data::{standardize, TimeSeriesBatch};
use tactis_core::flow::FlowConfig;
use tactis_core::model::{Model, ModelConfig};
use tactis_core::rng::RngStream;

pub fn small_config(n: usize) -> ModelConfig {
    let mut c = ModelConfig::new(n);
    c.encoder.embed_dim = 4;
    c.encoder.ff_dim = 4;
    c.encoder.series_embed_dim = 2;
    c.flow = FlowConfig { layers: 2, hidden: 3 };
    c.copula = CopulaConfig {
        bins: 5,
        layers: 1,
        heads: 2,
        attention_dim: 4,
        mlp_layers: 1,
        mlp_dim: 4,
    };
    c
}

/// Model with every parameter shifted by uniform noise, so that no head
/// sits at its (flat) initialization.
pub fn perturbed_model(config: ModelConfig, seed: u64, scale: f64) -> Model {
    let mut model = Model::new(config, &mut RngStream::from_seed(seed)).unwrap();
    let mut rng = RngStream::named(seed, "perturb");
    for t in model.params_mut().tensors_mut() {
        for x in t.data_mut() {
            *x += rng.random_range(-scale..scale);
        }
    }
    model
}

/// Standardized `n × l` window of standard normal noise whose last
/// `hidden` steps are missing.
pub fn noise_window(n: usize, l: usize, hidden: usize, seed: u64) -> TimeSeriesBatch {
    let mut rng = RngStream::from_seed(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..l).map(|_| rng.sample(rand_distr::StandardNormal)).collect())
        .collect();
    let mut w = TimeSeriesBatch::from_rows(&rows).unwrap();
    w.set_mask((0..n * l).map(|k| k % l < l - hidden).collect()).unwrap();
    standardize(&w).unwrap().0
}
