//! Training loop, optimizer and forecasting.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample as sample_indices;

use crate::autodiff::{Tape, Tensor};
use crate::copula::random_permutation;
use crate::data::{destandardize_value, standardize, TimeSeriesBatch, WindowSampler, WindowSpec};
use crate::metrics::ForecastSamples;
use crate::model::{Model, ModelConfig};
use crate::nn::{Forward, ParamStore};
use crate::rng::RngStream;
use crate::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    /// Series per training window.
    pub bag_size: usize,
    pub batch_size: usize,
    pub samples_per_epoch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// History length over prediction length.
    pub ratio: usize,
    pub seed: u64,
    /// Trailing share of the training range held out for early stopping;
    /// 0 trains for exactly `max_epochs` epochs.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            grad_clip: 1e3,
            bag_size: 20,
            batch_size: 16,
            samples_per_epoch: 1600,
            max_epochs: 50,
            patience: 10,
            ratio: 2,
            seed: 0,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, num_series: usize) -> Result<(), ModelError> {
        if self.bag_size == 0 || self.bag_size > num_series {
            return Err(ModelError::Invalid(alloc::format!(
                "train.bag_size must lie in 1..={num_series}, got {}",
                self.bag_size
            )));
        }
        if self.patience > self.max_epochs {
            return Err(ModelError::Config("train.patience must not exceed train.max_epochs"));
        }
        if self.batch_size == 0 || self.samples_per_epoch < self.batch_size {
            return Err(ModelError::Config(
                "train.samples_per_epoch must be at least train.batch_size > 0",
            ));
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 || !(self.grad_clip > 0.0) {
            return Err(ModelError::Config(
                "need train.lr > 0, train.weight_decay >= 0, train.grad_clip > 0",
            ));
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return Err(ModelError::Config("the validation fraction must lie in [0, 0.5)"));
        }
        Ok(())
    }

    /// Optimizer steps per epoch; bagging multiplies them by `n / b`.
    pub fn iterations_per_epoch(&self, num_series: usize) -> usize {
        (self.samples_per_epoch / self.batch_size) * (num_series / self.bag_size)
    }
}

/// RMSprop with coupled weight decay.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub alpha: f64,
    pub eps: f64,
    pub weight_decay: f64,
    square_avg: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(params: &ParamStore, learning_rate: f64, weight_decay: f64) -> Self {
        RmsProp {
            learning_rate,
            alpha: 0.99,
            eps: 1e-8,
            weight_decay,
            square_avg: params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) {
        for ((p, g), v) in params.tensors_mut().iter_mut().zip(grads).zip(&mut self.square_avg) {
            for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                let gi = gi + self.weight_decay * *w;
                *vi = self.alpha * *vi + (1.0 - self.alpha) * gi * gi;
                *w -= self.learning_rate * gi / (libm::sqrt(*vi) + self.eps);
            }
        }
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    libm::sqrt(grads.iter().flat_map(|g| g.data()).map(|x| x * x).sum())
}

/// Rescales `grads` so that their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let c = max_norm / norm;
        grads
            .iter_mut()
            .for_each(|g| g.data_mut().iter_mut().for_each(|x| *x *= c));
    }
    norm
}

/// Trained parameters with the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub window: WindowSpec,
    pub params: ParamStore,
    /// Epoch (1-based) the parameters come from.
    pub epoch: usize,
    /// Validation loss of those parameters; NaN without validation.
    pub validation_loss: f64,
}

impl Checkpoint {
    pub fn to_model(&self) -> Result<Model, ModelError> {
        Model::from_params(self.model.clone(), self.params.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    /// Largest time index inside any training or validation window.
    pub max_step_seen: Option<usize>,
}

/// Window spec of a forecasting setup with the configured history ratio.
pub fn forecast_spec(prediction_length: usize, config: &TrainConfig) -> WindowSpec {
    WindowSpec::forecast(config.ratio * prediction_length, prediction_length)
}

/// Mean NLL per missing token over fixed validation windows and permutations.
pub fn evaluate_nll(model: &Model, windows: &[TimeSeriesBatch], seed: u64) -> Result<f64, ModelError> {
    let mut rng = RngStream::named(seed, "validation");
    let mut total = 0.0;
    for chunk in windows.chunks(16) {
        let tape = Tape::new();
        let bound = model.params().bind(&tape, false);
        let f = Forward::eval(&bound);
        let refs: Vec<&TimeSeriesBatch> = chunk.iter().collect();
        total += model.nll_loss(&f, &refs, &mut rng)?.item() * chunk.len() as f64;
    }
    Ok(total / windows.len() as f64)
}

const VALIDATION_WINDOWS: usize = 256;

fn validation_windows(
    data: &TimeSeriesBatch,
    split: usize,
    end: usize,
    spec: &WindowSpec,
) -> Result<Vec<TimeSeriesBatch>, ModelError> {
    let w = spec.window_length();
    // Windows whose last step falls in the held-out range.
    let first = (split + 1).saturating_sub(w);
    if end < w || end - w < first {
        return Err(crate::data::DataError::TooShort {
            window: w,
            available: end - split,
        }
        .into());
    }
    let span = end - w - first;
    let count = (span + 1).min(VALIDATION_WINDOWS);
    let sampler = WindowSampler::new(data, end);
    (0..count)
        .map(|k| {
            let start = if count == 1 {
                first
            } else {
                first + k * span / (count - 1)
            };
            let win = sampler.window_at(start, spec)?;
            Ok(standardize(&win)?.0)
        })
        .collect()
}

/// Trains on the steps `[0, end)` of `data`.
pub fn train_until(
    data: &TimeSeriesBatch,
    end: usize,
    model_config: &ModelConfig,
    config: &TrainConfig,
    spec: &WindowSpec,
) -> Result<TrainOutcome, ModelError> {
    let n = data.num_series();
    config.validate(n)?;
    model_config.validate()?;
    spec.validate()?;
    let end = end.min(data.len());
    let seed = config.seed;
    let mut model = Model::new(model_config.clone(), &mut RngStream::named(seed, "init"))?;
    let mut opt = RmsProp::new(model.params(), config.learning_rate, config.weight_decay);
    let mut window_rng = RngStream::named(seed, "windows");
    let mut bag_rng = RngStream::named(seed, "bagging");
    let mut perm_rng = RngStream::named(seed, "permutations");
    let mut dropout_rng = RngStream::named(seed, "dropout");

    let holdout = libm::ceil(config.validation_fraction * end as f64) as usize;
    let split = end - holdout;
    let validation = if holdout > 0 {
        Some(validation_windows(data, split, end, spec)?)
    } else {
        None
    };
    let sampler = WindowSampler::new(data, split);
    if sampler.num_starts(spec) == 0 {
        return Err(crate::data::DataError::TooShort {
            window: spec.window_length(),
            available: split,
        }
        .into());
    }
    let mut max_step = validation.as_ref().map(|_| end - 1);

    let iterations = config.iterations_per_epoch(n);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut since_best = 0;
    for epoch in 1..=config.max_epochs {
        let mut epoch_loss = 0.0;
        for it in 0..iterations {
            let mut windows = Vec::with_capacity(config.batch_size);
            for _ in 0..config.batch_size {
                let win = sampler.sample(spec, &mut window_rng)?;
                let mut rows = sample_indices(&mut bag_rng, n, config.bag_size).into_vec();
                rows.sort_unstable();
                let bag = win.select_series(&rows);
                windows.push(standardize(&bag)?.0);
            }
            let refs: Vec<&TimeSeriesBatch> = windows.iter().collect();
            let tape = Tape::new();
            let bound = model.params().bind(&tape, true);
            let f = Forward::train(&bound, model_config.encoder.dropout, dropout_rng.split("step"));
            let loss = model.nll_loss(&f, &refs, &mut perm_rng)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(ModelError::Diverged {
                    epoch,
                    iteration: it,
                    loss: value,
                });
            }
            loss.backward()?;
            let mut grads = bound.gradients();
            let norm = clip_grad_norm(&mut grads, config.grad_clip);
            if !norm.is_finite() {
                return Err(ModelError::Diverged {
                    epoch,
                    iteration: it,
                    loss: norm,
                });
            }
            drop(bound);
            opt.step(model.params_mut(), &grads);
            epoch_loss += value;
        }
        if let Some(s) = sampler.max_step_seen() {
            max_step = Some(max_step.map_or(s, |m: usize| m.max(s)));
        }
        let train_loss = epoch_loss / iterations.max(1) as f64;
        let validation_loss = match &validation {
            Some(v) => evaluate_nll(&model, v, seed)?,
            None => f64::NAN,
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss,
        });
        if validation.is_none() {
            continue;
        }
        if !validation_loss.is_finite() {
            return Err(ModelError::Diverged {
                epoch,
                iteration: iterations,
                loss: validation_loss,
            });
        }
        if best.as_ref().is_none_or(|(b, _, _)| validation_loss < *b) {
            best = Some((validation_loss, epoch, model.params().clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let (validation_loss, epoch, params) = match best {
        Some(b) => b,
        None => (f64::NAN, history.len(), model.params().clone()),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model: model_config.clone(),
            train: config.clone(),
            window: spec.clone(),
            params,
            epoch,
            validation_loss,
        },
        history,
        max_step_seen: max_step,
    })
}

pub fn train(
    data: &TimeSeriesBatch,
    model_config: &ModelConfig,
    config: &TrainConfig,
    spec: &WindowSpec,
) -> Result<TrainOutcome, ModelError> {
    train_until(data, data.len(), model_config, config, spec)
}

/// Draws `num_samples` joint trajectories for the missing tokens of `batch`.
///
/// The batch is standardized with its observed tokens; draws are mapped back
/// to its scale. The output covers every step where some series is missing,
/// with observed cells copied into all samples.
pub fn forecast(
    model: &Model,
    batch: &TimeSeriesBatch,
    num_samples: usize,
    rng: &mut RngStream,
) -> Result<ForecastSamples, ModelError> {
    let (std, state) = standardize(batch)?;
    let draws = model.sample(&std, num_samples, None, rng)?;
    let (n, l) = (batch.num_series(), batch.len());
    let steps: Vec<usize> = (0..l).filter(|&j| (0..n).any(|i| !batch.is_observed(i, j))).collect();
    let t = steps.len();
    let q = draws.missing.len();
    let mut position = vec![usize::MAX; n * l];
    for (k, &tok) in draws.missing.iter().enumerate() {
        position[tok] = k;
    }
    let mut values = Vec::with_capacity(num_samples * n * t);
    for s in 0..num_samples {
        for i in 0..n {
            for &j in &steps {
                let tok = i * l + j;
                values.push(match position[tok] {
                    usize::MAX => batch.value(i, j),
                    k => destandardize_value(draws.x[s * q + k], state.mean[i], state.scale(i)),
                });
            }
        }
    }
    let timestamps = steps.iter().map(|&j| batch.timestamps().at(0, j)).collect();
    Ok(ForecastSamples::new(
        num_samples,
        batch.series_ids().to_vec(),
        timestamps,
        values,
    )?)
}

/// Permutations for every window, drawn uniformly.
pub fn random_permutations(windows: usize, q: usize, rng: &mut RngStream) -> Vec<Vec<usize>> {
    (0..windows).map(|_| random_permutation(q, rng)).collect()
}
