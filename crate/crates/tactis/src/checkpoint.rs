//! JSON checkpoints. Floats are written in shortest round-trip form, so a
//! save/load cycle restores every parameter bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tactis_core::autodiff::Tensor;
use tactis_core::copula::CopulaConfig;
use tactis_core::data::{MaskPattern, WindowSpec};
use tactis_core::encoder::{EncoderConfig, EncoderVariant};
use tactis_core::flow::FlowConfig;
use tactis_core::model::ModelConfig;
use tactis_core::nn::ParamStore;
use tactis_core::train::{Checkpoint, TrainConfig};

use crate::error::CliError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct File {
    format_version: u32,
    model: Model,
    train: Train,
    window: Window,
    epoch: usize,
    /// Absent when training ran without validation.
    validation_loss: Option<f64>,
    params: Vec<Param>,
}

#[derive(Serialize, Deserialize)]
struct Model {
    num_series: usize,
    cov_dim: usize,
    embed_dim: usize,
    heads: usize,
    layer_pairs: usize,
    ff_dim: usize,
    series_embed_dim: usize,
    variant: String,
    dropout: f64,
    flow_layers: usize,
    flow_hidden: usize,
    bins: usize,
    copula_layers: usize,
    copula_heads: usize,
    attention_dim: usize,
    mlp_layers: usize,
    mlp_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct Train {
    learning_rate: f64,
    weight_decay: f64,
    grad_clip: f64,
    bag_size: usize,
    batch_size: usize,
    samples_per_epoch: usize,
    max_epochs: usize,
    patience: usize,
    ratio: usize,
    seed: u64,
    validation_fraction: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Pattern {
    ForecastSuffix,
    InterpolationGap { offset: usize, gap_length: usize },
    Explicit { observed: Vec<bool> },
}

#[derive(Serialize, Deserialize)]
struct Window {
    history_length: usize,
    prediction_length: usize,
    pattern: Pattern,
}

#[derive(Serialize, Deserialize)]
struct Param {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn to_file(c: &Checkpoint) -> File {
    let (m, t, w) = (&c.model, &c.train, &c.window);
    File {
        format_version: FORMAT_VERSION,
        model: Model {
            num_series: m.num_series,
            cov_dim: m.cov_dim,
            embed_dim: m.encoder.embed_dim,
            heads: m.encoder.heads,
            layer_pairs: m.encoder.layer_pairs,
            ff_dim: m.encoder.ff_dim,
            series_embed_dim: m.encoder.series_embed_dim,
            variant: match m.encoder.variant {
                EncoderVariant::Standard => "standard".into(),
                EncoderVariant::Temporal => "temporal".into(),
            },
            dropout: m.encoder.dropout,
            flow_layers: m.flow.layers,
            flow_hidden: m.flow.hidden,
            bins: m.copula.bins,
            copula_layers: m.copula.layers,
            copula_heads: m.copula.heads,
            attention_dim: m.copula.attention_dim,
            mlp_layers: m.copula.mlp_layers,
            mlp_dim: m.copula.mlp_dim,
        },
        train: Train {
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            grad_clip: t.grad_clip,
            bag_size: t.bag_size,
            batch_size: t.batch_size,
            samples_per_epoch: t.samples_per_epoch,
            max_epochs: t.max_epochs,
            patience: t.patience,
            ratio: t.ratio,
            seed: t.seed,
            validation_fraction: t.validation_fraction,
        },
        window: Window {
            history_length: w.history_length,
            prediction_length: w.prediction_length,
            pattern: match &w.pattern {
                MaskPattern::ForecastSuffix => Pattern::ForecastSuffix,
                MaskPattern::InterpolationGap { offset, gap_length } => Pattern::InterpolationGap {
                    offset: *offset,
                    gap_length: *gap_length,
                },
                MaskPattern::Explicit(m) => Pattern::Explicit { observed: m.clone() },
            },
        },
        epoch: c.epoch,
        validation_loss: c.validation_loss.is_finite().then_some(c.validation_loss),
        params: c
            .params
            .iter()
            .map(|(name, t)| Param {
                name: name.into(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect(),
    }
}

fn from_file(f: File) -> Result<Checkpoint, CliError> {
    if f.format_version != FORMAT_VERSION {
        return Err(CliError::Data(format!(
            "checkpoint format version {} is not supported (expected {FORMAT_VERSION})",
            f.format_version
        )));
    }
    let m = f.model;
    let variant = match m.variant.as_str() {
        "standard" => EncoderVariant::Standard,
        "temporal" => EncoderVariant::Temporal,
        v => return Err(CliError::Data(format!("unknown encoder variant `{v}` in checkpoint"))),
    };
    let model = ModelConfig {
        encoder: EncoderConfig {
            embed_dim: m.embed_dim,
            heads: m.heads,
            layer_pairs: m.layer_pairs,
            ff_dim: m.ff_dim,
            series_embed_dim: m.series_embed_dim,
            variant,
            dropout: m.dropout,
        },
        flow: FlowConfig {
            layers: m.flow_layers,
            hidden: m.flow_hidden,
        },
        copula: CopulaConfig {
            bins: m.bins,
            layers: m.copula_layers,
            heads: m.copula_heads,
            attention_dim: m.attention_dim,
            mlp_layers: m.mlp_layers,
            mlp_dim: m.mlp_dim,
        },
        num_series: m.num_series,
        cov_dim: m.cov_dim,
    };
    let t = f.train;
    let train = TrainConfig {
        learning_rate: t.learning_rate,
        weight_decay: t.weight_decay,
        grad_clip: t.grad_clip,
        bag_size: t.bag_size,
        batch_size: t.batch_size,
        samples_per_epoch: t.samples_per_epoch,
        max_epochs: t.max_epochs,
        patience: t.patience,
        ratio: t.ratio,
        seed: t.seed,
        validation_fraction: t.validation_fraction,
    };
    let window = WindowSpec {
        history_length: f.window.history_length,
        prediction_length: f.window.prediction_length,
        pattern: match f.window.pattern {
            Pattern::ForecastSuffix => MaskPattern::ForecastSuffix,
            Pattern::InterpolationGap { offset, gap_length } => MaskPattern::InterpolationGap { offset, gap_length },
            Pattern::Explicit { observed } => MaskPattern::Explicit(observed),
        },
    };
    let mut params = ParamStore::new();
    for p in f.params {
        let t = Tensor::new(p.shape, p.data).map_err(|e| CliError::Data(format!("parameter `{}`: {e}", p.name)))?;
        params.add(p.name, t);
    }
    let c = Checkpoint {
        model,
        train,
        window,
        params,
        epoch: f.epoch,
        validation_loss: f.validation_loss.unwrap_or(f64::NAN),
    };
    // Fails on a parameter layout that does not match the configuration.
    c.to_model()?;
    Ok(c)
}

pub fn to_json(c: &Checkpoint) -> String {
    serde_json::to_string_pretty(&to_file(c)).expect("checkpoint serializes")
}

pub fn from_json(text: &str) -> Result<Checkpoint, CliError> {
    let f: File = serde_json::from_str(text).map_err(|e| CliError::Data(format!("checkpoint: {e}")))?;
    from_file(f)
}

pub fn save(path: &Path, c: &Checkpoint) -> Result<(), CliError> {
    crate::io::write_text(path, &to_json(c))
}

pub fn load(path: &Path) -> Result<Checkpoint, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    from_json(&text).map_err(|e| CliError::Data(format!("{}: {}", path.display(), e.message())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tactis_core::model::Model as Net;
    use tactis_core::rng::RngStream;

    fn checkpoint(validation_loss: f64) -> Checkpoint {
        let config = ModelConfig::new(2);
        let model = Net::new(config.clone(), &mut RngStream::from_seed(4)).unwrap();
        Checkpoint {
            model: config,
            train: TrainConfig::default(),
            window: WindowSpec::interpolation(3, 2, 3),
            params: model.params().clone(),
            epoch: 7,
            validation_loss,
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let c = checkpoint(0.1 + 0.2);
        let back = from_json(&to_json(&c)).unwrap();
        assert_eq!(back, c);
        let bits = |c: &Checkpoint| c.params.flatten().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&c));
    }

    #[test]
    fn missing_validation_loss_survives() {
        let back = from_json(&to_json(&checkpoint(f64::NAN))).unwrap();
        assert!(back.validation_loss.is_nan());
    }

    #[test]
    fn version_and_layout_are_checked() {
        let text = to_json(&checkpoint(1.0));
        let bumped = text.replacen("\"format_version\": 1", "\"format_version\": 9", 1);
        assert!(from_json(&bumped).unwrap_err().to_string().contains("version 9"));
        let mut c = checkpoint(1.0);
        c.model.copula.bins = 7;
        assert!(from_json(&to_json(&c)).is_err());
    }
}
