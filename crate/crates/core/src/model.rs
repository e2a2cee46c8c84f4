//! The full model: encoder, flow marginals and attentional copula.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Tensor, Var};
use crate::copula::{check_permutation, random_permutation, Copula, CopulaConfig};
use crate::data::{standardize, TimeSeriesBatch};
use crate::encoder::{Encoder, EncoderConfig};
use crate::flow::{flow_forward, params_of_row, FlowConfig, FlowParams};
use crate::nn::{Forward, Mlp, ParamStore};
use crate::rng::RngStream;
use crate::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub flow: FlowConfig,
    pub copula: CopulaConfig,
    /// Size of the series embedding table; series ids must stay below it.
    pub num_series: usize,
    pub cov_dim: usize,
}

impl ModelConfig {
    pub fn new(num_series: usize) -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            flow: FlowConfig::default(),
            copula: CopulaConfig::default(),
            num_series,
            cov_dim: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.encoder.validate()?;
        self.flow.validate()?;
        self.copula.validate()?;
        if self.num_series == 0 {
            return Err(ModelError::Config("the model needs at least one series"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    params: ParamStore,
    encoder: Encoder,
    marginal: Mlp,
    copula: Copula,
}

/// Missing-token bookkeeping of one window, in series-major token order.
fn missing_tokens(w: &TimeSeriesBatch) -> Vec<usize> {
    (0..w.mask().len()).filter(|&t| !w.mask()[t]).collect()
}

/// Draws for the missing tokens of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowDraws {
    /// Token indices `i * l + j` of the missing tokens.
    pub missing: Vec<usize>,
    /// Copula samples, `samples × missing`.
    pub u: Vec<f64>,
    /// Values on the scale of the window, `samples × missing`.
    pub x: Vec<f64>,
    /// Visiting order used by the copula.
    pub permutation: Vec<usize>,
    pub samples: usize,
}

impl Model {
    pub fn new(config: ModelConfig, rng: &mut RngStream) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = ParamStore::new();
        let encoder = Encoder::new(
            &mut params,
            config.encoder.clone(),
            config.num_series,
            config.cov_dim,
            rng,
        )?;
        let d = config.encoder.embed_dim;
        let marginal = Mlp::new(
            &mut params,
            "marginal",
            &config.copula.mlp_sizes(d, config.flow.raw_size()),
            rng,
        );
        let copula = Copula::new(&mut params, config.copula, d, rng)?;
        Ok(Model {
            config,
            params,
            encoder,
            marginal,
            copula,
        })
    }

    /// Rebuilds a model around stored parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self, ModelError> {
        let mut model = Model::new(config, &mut RngStream::from_seed(0))?;
        let matches = model.params.len() == params.len()
            && model
                .params
                .iter()
                .zip(params.iter())
                .all(|((a, ta), (b, tb))| a == b && ta.shape() == tb.shape());
        if !matches {
            return Err(ModelError::Shape(
                "stored parameters do not fit the model configuration",
            ));
        }
        model.params = params;
        Ok(model)
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn copula(&self) -> &Copula {
        &self.copula
    }

    /// Encodings `[B, N, d]` of standardized windows.
    pub fn encode<'t>(&self, f: &Forward<'t, '_>, windows: &[&TimeSeriesBatch]) -> Result<Var<'t>, ModelError> {
        self.encoder.encode(f, windows)
    }

    /// Raw flow parameters `[B·N, raw]` from encodings `[B, N, d]`.
    pub fn marginal_params<'t>(&self, f: &Forward<'t, '_>, z: Var<'t>) -> Result<Var<'t>, ModelError> {
        let s = z.shape();
        let raw = self.marginal.forward(f, z)?;
        Ok(raw.reshape(&[s[0] * s[1], self.config.flow.raw_size()])?)
    }

    /// `log g` of the missing values of every window, shape `[B]`.
    ///
    /// Windows must be standardized and share their shape and number of
    /// missing tokens. `perms[b][k]` is the index (into the window's missing
    /// tokens, in token order) visited at step `k`.
    pub fn log_likelihood<'t>(
        &self,
        f: &Forward<'t, '_>,
        windows: &[&TimeSeriesBatch],
        perms: &[Vec<usize>],
    ) -> Result<Var<'t>, ModelError> {
        let first = windows.first().ok_or(ModelError::EmptyBatch)?;
        if perms.len() != windows.len() {
            return Err(ModelError::Shape("one permutation per window is required"));
        }
        let b = windows.len();
        let n = first.num_series() * first.len();
        let q = first.num_missing();
        if q == 0 {
            return Err(ModelError::NoMissingTokens);
        }
        let mut missing = Vec::with_capacity(b * q);
        let mut rank = vec![0; b * q];
        let mut observed = Vec::with_capacity(b * n);
        let mut x = Vec::with_capacity(b * n);
        for (w, (win, perm)) in windows.iter().zip(perms).enumerate() {
            let m = missing_tokens(win);
            if m.len() != q {
                return Err(ModelError::Shape(
                    "windows of one batch must have the same number of missing tokens",
                ));
            }
            check_permutation(perm, q)?;
            for (k, &t) in perm.iter().enumerate() {
                rank[w * q + t] = k;
            }
            missing.extend(m);
            observed.extend_from_slice(win.mask());
            x.extend_from_slice(win.values());
        }
        let tape = f.tape();
        let z = self.encode(f, windows)?;
        let raw = self.marginal_params(f, z)?;
        let (u, log_pdf) = flow_forward(raw, tape.constant(Tensor::vector(x)), self.config.flow)?;
        let u = u.reshape(&[b, n])?;
        let marginal = log_pdf.reshape(&[b, n])?.gather(1, &missing, q)?.sum_axis(1)?;
        let copula = self.copula.log_density_batched(f, z, u, &missing, &rank, &observed)?;
        Ok(marginal.add(copula)?)
    }

    /// Mean over windows of `-log g / n_m`, one uniform permutation per window.
    pub fn nll_loss<'t>(
        &self,
        f: &Forward<'t, '_>,
        windows: &[&TimeSeriesBatch],
        rng: &mut RngStream,
    ) -> Result<Var<'t>, ModelError> {
        let q = windows.first().ok_or(ModelError::EmptyBatch)?.num_missing();
        if q == 0 {
            return Err(ModelError::NoMissingTokens);
        }
        let perms: Vec<Vec<usize>> = windows.iter().map(|_| random_permutation(q, rng)).collect();
        let ll = self.log_likelihood(f, windows, &perms)?;
        Ok(ll.mean().scale(-1.0 / q as f64))
    }

    /// Flow parameters of every token and encodings of one standardized window.
    fn prepare(&self, window: &TimeSeriesBatch) -> Result<(Tensor, Vec<FlowParams>), ModelError> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape, false);
        let f = Forward::eval(&bound);
        let z = self.encode(&f, &[window])?;
        let raw = self.marginal_params(&f, z)?.value();
        let flows = (0..raw.shape()[0])
            .map(|k| params_of_row(&raw, k, self.config.flow))
            .collect::<Result<Vec<_>, _>>()?;
        let zt = z.value();
        let d = self.config.encoder.embed_dim;
        Ok((zt.reshaped(vec![window.num_series() * window.len(), d])?, flows))
    }

    /// Joint log-density of the missing values of a raw window, in its
    /// original units: the window is standardized with its observed tokens
    /// and the change of scale is accounted for.
    pub fn log_density(&self, window: &TimeSeriesBatch, permutation: &[usize]) -> Result<f64, ModelError> {
        let (std, state) = standardize(window)?;
        let tape = Tape::new();
        let bound = self.params.bind(&tape, false);
        let f = Forward::eval(&bound);
        let ll = self.log_likelihood(&f, &[&std], &[permutation.to_vec()])?.item();
        let l = window.len();
        let jacobian: f64 = missing_tokens(window)
            .iter()
            .map(|&k| libm::log(state.scale(k / l)))
            .sum();
        Ok(ll - jacobian)
    }

    /// Joint draws for the missing tokens of one standardized window.
    pub fn sample(
        &self,
        window: &TimeSeriesBatch,
        samples: usize,
        permutation: Option<Vec<usize>>,
        rng: &mut RngStream,
    ) -> Result<WindowDraws, ModelError> {
        let missing = missing_tokens(window);
        let q = missing.len();
        let (z, flows) = self.prepare(window)?;
        let d = self.config.encoder.embed_dim;
        let rows = |idx: &[usize]| -> Result<Tensor, ModelError> {
            let data = idx
                .iter()
                .flat_map(|&t| z.data()[t * d..(t + 1) * d].iter().copied())
                .collect();
            Ok(Tensor::new(vec![idx.len(), d], data)?)
        };
        let observed: Vec<usize> = (0..window.mask().len()).filter(|&t| window.mask()[t]).collect();
        let u_obs: Vec<f64> = observed.iter().map(|&t| flows[t].cdf(window.values()[t])).collect();
        let perm = match permutation {
            Some(p) => p,
            None => random_permutation(q, rng),
        };
        let cache = self.copula.memory(&self.params, &rows(&observed)?, &u_obs, samples)?;
        let (u, _) = self
            .copula
            .walk(&self.params, cache, &rows(&missing)?, &perm, None, rng)?;
        let mut x = Vec::with_capacity(u.len());
        for s in 0..samples {
            for (k, &t) in missing.iter().enumerate() {
                // A draw of exactly 0 has no finite preimage.
                let v = u[s * q + k].clamp(f64::EPSILON, 1.0 - f64::EPSILON);
                x.push(flows[t].inverse_cdf(v)?);
            }
        }
        Ok(WindowDraws {
            missing,
            u,
            x,
            permutation: perm,
            samples,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_check, scalar_fn};
    use crate::data::{standardize, TimeSeriesBatch};

    fn toy_window(mask_last: usize) -> TimeSeriesBatch {
        let rows = vec![vec![0.3, -1.2, 0.8, 0.1], vec![1.5, 0.2, -0.4, -0.9]];
        let mut w = TimeSeriesBatch::from_rows(&rows).unwrap();
        let mask: Vec<bool> = (0..8).map(|k| k % 4 < 4 - mask_last).collect();
        w.set_mask(mask).unwrap();
        standardize(&w).unwrap().0
    }

    fn small_config() -> ModelConfig {
        let mut c = ModelConfig::new(2);
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

    #[test]
    fn single_missing_token_is_its_marginal() {
        let model = Model::new(small_config(), &mut RngStream::from_seed(0)).unwrap();
        let mut w = toy_window(0);
        let mut mask = vec![true; 8];
        mask[5] = false;
        w.set_mask(mask).unwrap();
        let tape = Tape::new();
        let bound = model.params().bind(&tape, false);
        let f = Forward::eval(&bound);
        let ll = model.log_likelihood(&f, &[&w], &[vec![0]]).unwrap().item();
        let (_, flows) = model.prepare(&w).unwrap();
        assert!((ll - flows[5].log_pdf(w.values()[5])).abs() < 1e-12);
    }

    #[test]
    fn no_missing_tokens_is_an_error() {
        let model = Model::new(small_config(), &mut RngStream::from_seed(0)).unwrap();
        let w = toy_window(0);
        let tape = Tape::new();
        let bound = model.params().bind(&tape, false);
        let f = Forward::eval(&bound);
        let r = model.nll_loss(&f, &[&w], &mut RngStream::from_seed(1));
        assert_eq!(r.unwrap_err(), ModelError::NoMissingTokens);
    }

    #[test]
    fn raw_log_density_is_scale_equivariant() {
        let model = Model::new(small_config(), &mut RngStream::from_seed(4)).unwrap();
        let rows = vec![vec![0.3, -1.2, 0.8, 0.1], vec![1.5, 0.2, -0.4, -0.9]];
        let mask: Vec<bool> = (0..8).map(|k| k % 4 < 2).collect();
        let mut a = TimeSeriesBatch::from_rows(&rows).unwrap();
        a.set_mask(mask.clone()).unwrap();
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| 3.0 * x + 7.0).collect()).collect();
        let mut b = TimeSeriesBatch::from_rows(&scaled).unwrap();
        b.set_mask(mask).unwrap();
        let perm = [2, 0, 3, 1];
        let (la, lb) = (
            model.log_density(&a, &perm).unwrap(),
            model.log_density(&b, &perm).unwrap(),
        );
        assert!((la - lb - 4.0 * libm::log(3.0)).abs() < 1e-9, "{la} {lb}");
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let mut model = Model::new(small_config(), &mut RngStream::from_seed(2)).unwrap();
        model.params_mut().perturb(0.3, &mut RngStream::from_seed(3));
        let w = toy_window(1);
        let point = Tensor::vector(model.params().flatten());
        let f = scalar_fn(move |_tape, p| {
            let bound = model.params().bind_flat(p)?;
            let fw = Forward::eval(&bound);
            let ll = model.log_likelihood(&fw, &[&w], &[vec![1, 0]]).map_err(|e| match e {
                ModelError::Tensor(t) => t,
                _ => panic!("{e}"),
            })?;
            Ok(ll.sum().neg())
        });
        let err = finite_difference_check(f, &point, 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn sampling_shapes_and_reproducibility() {
        let model = Model::new(small_config(), &mut RngStream::from_seed(3)).unwrap();
        let w = toy_window(2);
        let a = model.sample(&w, 7, None, &mut RngStream::from_seed(9)).unwrap();
        let b = model.sample(&w, 7, None, &mut RngStream::from_seed(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.x.len(), 7 * 4);
        assert_eq!(a.missing, vec![2, 3, 6, 7]);
        assert!(a.x.iter().all(|v| v.is_finite()));
        assert!(a.u.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn stored_parameters_roundtrip() {
        let model = Model::new(small_config(), &mut RngStream::from_seed(4)).unwrap();
        let again = Model::from_params(model.config.clone(), model.params().clone()).unwrap();
        assert_eq!(again.params(), model.params());
        let mut other = small_config();
        other.copula.bins = 6;
        assert!(Model::from_params(other, model.params().clone()).is_err());
    }
}
