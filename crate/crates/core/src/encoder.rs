//! Token embedding, positional encoding and the self-attention stack that
//! turns every (series, step) token into an encoding `z`.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tensor, TensorError, Var};
use crate::data::TimeSeriesBatch;
use crate::nn::{glorot, Forward, LayerNorm, Mlp, ParamId, ParamStore, SelfAttention};
use crate::rng::RngStream;
use crate::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderVariant {
    /// Every token attends to every other token.
    Standard,
    /// Layers alternate between attention along time within a series and
    /// attention across series at one time step.
    Temporal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub layer_pairs: usize,
    pub ff_dim: usize,
    pub series_embed_dim: usize,
    pub variant: EncoderVariant,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            embed_dim: 16,
            heads: 2,
            layer_pairs: 1,
            ff_dim: 16,
            series_embed_dim: 5,
            variant: EncoderVariant::Standard,
            dropout: 0.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.embed_dim == 0 || self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(ModelError::Config(
                "encoder.embed_dim must be a positive multiple of encoder.heads",
            ));
        }
        if !self.embed_dim.is_multiple_of(2) {
            return Err(ModelError::Config("encoder.embed_dim must be even"));
        }
        if self.layer_pairs == 0 || self.ff_dim == 0 {
            return Err(ModelError::Config(
                "encoder.layer_pairs and encoder.ff_dim must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config("encoder.dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Sinusoidal encoding of the integer positions `0..steps`, shape `[steps, dim]`.
pub fn positional_encoding(steps: usize, dim: usize) -> Result<Tensor, ModelError> {
    if !dim.is_multiple_of(2) {
        return Err(ModelError::Config("positional encoding needs an even dimension"));
    }
    let mut data = vec![0.0; steps * dim];
    for j in 0..steps {
        for i in 0..dim / 2 {
            let freq = libm::pow(10_000.0, -((2 * i) as f64) / dim as f64);
            let angle = j as f64 * freq;
            data[j * dim + 2 * i] = libm::sin(angle);
            data[j * dim + 2 * i + 1] = libm::cos(angle);
        }
    }
    Ok(Tensor::new(vec![steps, dim], data)?)
}

#[derive(Debug, Clone)]
struct Block {
    norm_attn: LayerNorm,
    attn: SelfAttention,
    norm_ff: LayerNorm,
    ff: Mlp,
}

impl Block {
    fn new(store: &mut ParamStore, name: &str, cfg: &EncoderConfig, rng: &mut RngStream) -> Self {
        let d = cfg.embed_dim;
        Block {
            norm_attn: LayerNorm::new(store, &alloc::format!("{name}.norm_attn"), d),
            attn: SelfAttention::new(store, &alloc::format!("{name}.attn"), d, cfg.heads, rng),
            norm_ff: LayerNorm::new(store, &alloc::format!("{name}.norm_ff"), d),
            ff: Mlp::new(store, &alloc::format!("{name}.ff"), &[d, cfg.ff_dim, d], rng),
        }
    }

    /// Pre-norm residual block over the middle axis of `[G, T, d]`.
    fn forward<'t>(&self, f: &Forward<'t, '_>, x: Var<'t>) -> Result<Var<'t>, TensorError> {
        let (a, _) = self.attn.forward(f, self.norm_attn.forward(f, x)?)?;
        let x = x.add(f.dropout(a)?)?;
        let h = self.ff.forward(f, self.norm_ff.forward(f, x)?)?;
        x.add(f.dropout(h)?)
    }
}

/// Embedding network and attention stack.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    cov_dim: usize,
    num_series: usize,
    series_embedding: ParamId,
    embed: Mlp,
    blocks: Vec<Block>,
    final_norm: LayerNorm,
}

impl Encoder {
    pub fn new(
        store: &mut ParamStore,
        config: EncoderConfig,
        num_series: usize,
        cov_dim: usize,
        rng: &mut RngStream,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.embed_dim;
        let series_embedding = store.add(
            "encoder.series_embedding",
            glorot(num_series.max(1), config.series_embed_dim.max(1), rng),
        );
        let input = 3 + cov_dim + config.series_embed_dim;
        let embed = Mlp::new(store, "encoder.embed", &[input, d, d], rng);
        let blocks = (0..2 * config.layer_pairs)
            .map(|i| Block::new(store, &alloc::format!("encoder.layer{i}"), &config, rng))
            .collect();
        let final_norm = LayerNorm::new(store, "encoder.final_norm", d);
        Ok(Encoder {
            config,
            cov_dim,
            num_series,
            series_embedding,
            embed,
            blocks,
            final_norm,
        })
    }

    pub fn num_series(&self) -> usize {
        self.num_series
    }

    /// Token features `[x·m, m, position, covariates...]` of a stack of
    /// equally shaped windows, shape `[B, n·l, 3 + d]`.
    fn features(&self, windows: &[&TimeSeriesBatch]) -> Result<Tensor, ModelError> {
        let first = windows.first().ok_or(ModelError::EmptyBatch)?;
        let (n, l) = (first.num_series(), first.len());
        let width = 3 + self.cov_dim;
        let mut data = Vec::with_capacity(windows.len() * n * l * width);
        for w in windows {
            if w.num_series() != n || w.len() != l {
                return Err(ModelError::Shape("windows of one batch must share their shape"));
            }
            if w.cov_dim() != self.cov_dim {
                return Err(ModelError::Shape("covariate dimension differs from the model"));
            }
            for i in 0..n {
                for j in 0..l {
                    let observed = w.is_observed(i, j);
                    data.push(if observed { w.value(i, j) } else { 0.0 });
                    data.push(if observed { 1.0 } else { 0.0 });
                    data.push(if l > 1 { j as f64 / (l - 1) as f64 } else { 0.0 });
                    let c = (i * l + j) * self.cov_dim;
                    data.extend_from_slice(&w.covariates()[c..c + self.cov_dim]);
                }
            }
        }
        Ok(Tensor::new(vec![windows.len(), n * l, width], data)?)
    }

    /// Embeddings `e` before positional encoding, shape `[B, n·l, d]`.
    pub fn embed_tokens<'t>(&self, f: &Forward<'t, '_>, windows: &[&TimeSeriesBatch]) -> Result<Var<'t>, ModelError> {
        let tape = f.tape();
        let feats = self.features(windows)?;
        let (b, nl) = (feats.shape()[0], feats.shape()[1]);
        let l = windows[0].len();
        let mut index = Vec::with_capacity(b * nl);
        for w in windows {
            for &id in w.series_ids() {
                if id >= self.num_series {
                    return Err(ModelError::SeriesId {
                        id,
                        known: self.num_series,
                    });
                }
                index.extend(core::iter::repeat_n(id, l));
            }
        }
        let se = self.config.series_embed_dim;
        let mut parts = vec![tape.constant(feats)];
        if se > 0 {
            let table = f.p(self.series_embedding);
            parts.push(table.gather(0, &index, b * nl)?.reshape(&[b, nl, se])?);
        }
        Ok(self.embed.forward(f, Var::concat(&parts, 2)?)?)
    }

    /// Encodings `z` of every token, shape `[B, n·l, d]`, series-major.
    pub fn encode<'t>(&self, f: &Forward<'t, '_>, windows: &[&TimeSeriesBatch]) -> Result<Var<'t>, ModelError> {
        let first = windows.first().ok_or(ModelError::EmptyBatch)?;
        let (n, l, d) = (first.num_series(), first.len(), self.config.embed_dim);
        if self.config.variant == EncoderVariant::Temporal && windows.iter().any(|w| !w.timestamps().is_aligned()) {
            return Err(ModelError::Unaligned);
        }
        let b = windows.len();
        let e = self.embed_tokens(f, windows)?;
        let pos = positional_encoding(l, d)?;
        let pos = f.tape().constant(pos.reshaped(vec![1, l, d])?);
        let mut x = e.reshape(&[b * n, l, d])?.scale(libm::sqrt(d as f64)).add(pos)?;
        match self.config.variant {
            EncoderVariant::Standard => {
                x = x.reshape(&[b, n * l, d])?;
                for block in &self.blocks {
                    x = block.forward(f, x)?;
                }
            }
            EncoderVariant::Temporal => {
                for pair in self.blocks.chunks(2) {
                    x = pair[0].forward(f, x)?;
                    let across = x
                        .reshape(&[b, n, l, d])?
                        .permute(&[0, 2, 1, 3])?
                        .reshape(&[b * l, n, d])?;
                    let across = pair[1].forward(f, across)?;
                    x = across
                        .reshape(&[b, l, n, d])?
                        .permute(&[0, 2, 1, 3])?
                        .reshape(&[b * n, l, d])?;
                }
                x = x.reshape(&[b, n * l, d])?;
            }
        }
        Ok(self.final_norm.forward(f, x)?)
    }
}
