//! Rolling retrain-and-forecast evaluation.
//!
//! Model `i` is trained on the steps before `retrain_times[i]` and then
//! forecasts from `retrain_times[i] + offset` for every configured offset.
//! All times are step indices into the dataset.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::TimeSeriesBatch;
use crate::metrics::{mean_std, score_forecast, ScoreReport};
use crate::model::ModelConfig;
use crate::rng::RngStream;
use crate::train::{forecast, forecast_spec, train_until, TrainConfig};
use crate::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestPlan {
    /// Strictly increasing retraining steps `τ_i`.
    pub retrain_times: Vec<usize>,
    /// Forecast origins relative to each retraining step.
    pub forecast_offsets: Vec<usize>,
    pub prediction_length: usize,
    /// Independently seeded models per retraining step.
    pub trials: usize,
}

impl BacktestPlan {
    /// Single train/evaluate run forecasting from `at`.
    pub fn single(at: usize, prediction_length: usize) -> Self {
        BacktestPlan {
            retrain_times: alloc::vec![at],
            forecast_offsets: alloc::vec![0],
            prediction_length,
            trials: 1,
        }
    }

    /// Checks the plan against a dataset of `len` steps whose forecast
    /// windows carry `history` observed steps.
    pub fn validate(&self, len: usize, history: usize) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Invalid(msg));
        if self.retrain_times.is_empty() || self.forecast_offsets.is_empty() {
            return bad("backtest needs at least one retrain time and one forecast offset".into());
        }
        if self.prediction_length == 0 || self.trials == 0 {
            return bad("backtest.prediction_length and backtest.trials must be positive".into());
        }
        if self.retrain_times.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!(
                "backtest.retrain_times must be strictly increasing: {:?}",
                self.retrain_times
            ));
        }
        for (i, &tau) in self.retrain_times.iter().enumerate() {
            let next = self.retrain_times.get(i + 1).copied().unwrap_or(usize::MAX);
            for &off in &self.forecast_offsets {
                let origin = tau + off;
                if origin >= next {
                    return bad(format!(
                        "forecast origin {origin} of retrain time {tau} reaches the next retrain time {next}"
                    ));
                }
                if origin < history {
                    return bad(format!(
                        "forecast origin {origin} leaves less than {history} steps of history"
                    ));
                }
                if origin + self.prediction_length > len {
                    return bad(format!(
                        "forecast window [{origin}, {}) runs past the {len} available steps",
                        origin + self.prediction_length
                    ));
                }
            }
        }
        Ok(())
    }

    /// Forecast origins of retrain time `i`.
    pub fn origins(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let tau = self.retrain_times[i];
        self.forecast_offsets.iter().map(move |&o| tau + o)
    }
}

/// Scores of one (retrain time, trial, forecast origin) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestCell {
    pub retrain_time: usize,
    pub trial: usize,
    pub forecast_time: usize,
    pub scores: Vec<ScoreReport>,
    /// Furthest step any training window of this cell's model touched.
    pub max_step_seen: usize,
}

/// Mean and standard deviation of one metric across all cells.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateScore {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub cells: Vec<BacktestCell>,
    pub aggregate: Vec<AggregateScore>,
}

/// Seed of trial `t` derived from the configured seed.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed.wrapping_add((trial as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Runs the plan. Every model trains for exactly `train.max_epochs` epochs
/// (no validation split), which is the fixed budget taken from an earlier
/// validation run.
pub fn run_backtest(
    data: &TimeSeriesBatch,
    plan: &BacktestPlan,
    model_config: &ModelConfig,
    train: &TrainConfig,
    num_samples: usize,
) -> Result<BacktestReport, ModelError> {
    let spec = forecast_spec(plan.prediction_length, train);
    plan.validate(data.len(), spec.history_length)?;
    train.validate(data.num_series())?;
    model_config.validate()?;
    for &tau in &plan.retrain_times {
        if tau < spec.window_length() {
            return Err(ModelError::Invalid(format!(
                "retrain time {tau} leaves no complete training window of {} steps",
                spec.window_length()
            )));
        }
    }
    if num_samples == 0 {
        return Err(ModelError::Invalid("backtest needs at least one sample".into()));
    }

    let mut cells = Vec::new();
    for (i, &tau) in plan.retrain_times.iter().enumerate() {
        for trial in 0..plan.trials {
            let config = TrainConfig {
                seed: trial_seed(train.seed, trial),
                validation_fraction: 0.0,
                ..train.clone()
            };
            let outcome = train_until(data, tau, model_config, &config, &spec)?;
            let max_step = outcome.max_step_seen.unwrap_or(0);
            assert!(max_step < tau, "training for retrain time {tau} read step {max_step}");
            let model = outcome.checkpoint.to_model()?;
            let mut rng = RngStream::named(config.seed, "sampling");
            for origin in plan.origins(i) {
                let start = origin - spec.history_length;
                let mut window = data.slice_time(start, spec.window_length())?;
                window.set_mask(spec.mask(window.num_series())?)?;
                let samples = forecast(&model, &window, num_samples, &mut rng.split("origin"))?;
                let truth = truth_of(&window, spec.history_length);
                cells.push(BacktestCell {
                    retrain_time: tau,
                    trial,
                    forecast_time: origin,
                    scores: score_forecast(&samples, &truth)?,
                    max_step_seen: max_step,
                });
            }
        }
    }
    let aggregate = aggregate(&cells);
    Ok(BacktestReport { cells, aggregate })
}

fn truth_of(window: &TimeSeriesBatch, history: usize) -> Vec<f64> {
    (0..window.num_series())
        .flat_map(|i| window.series(i)[history..].iter().copied())
        .collect()
}

/// Pools every cell (trials and forecast times alike) per metric.
pub fn aggregate(cells: &[BacktestCell]) -> Vec<AggregateScore> {
    let mut metrics: Vec<&str> = Vec::new();
    for c in cells {
        for s in &c.scores {
            if !metrics.contains(&s.metric.as_str()) {
                metrics.push(&s.metric);
            }
        }
    }
    metrics
        .into_iter()
        .map(|m| {
            let values: Vec<f64> = cells
                .iter()
                .flat_map(|c| c.scores.iter().filter(|s| s.metric == m).map(|s| s.value))
                .collect();
            let (mean, std) = mean_std(&values);
            AggregateScore {
                metric: m.into(),
                mean,
                std,
                count: values.len(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan() -> BacktestPlan {
        BacktestPlan {
            retrain_times: alloc::vec![100, 140],
            forecast_offsets: alloc::vec![0, 10],
            prediction_length: 5,
            trials: 2,
        }
    }

    #[test]
    fn valid_plan_passes() {
        assert!(plan().validate(200, 10).is_ok());
        assert_eq!(plan().origins(1).collect::<Vec<_>>(), [140, 150]);
    }

    #[test]
    fn invalid_plans_are_rejected() {
        let mut p = plan();
        p.retrain_times = alloc::vec![140, 100];
        assert!(p.validate(200, 10).is_err());
        let mut p = plan();
        p.forecast_offsets = alloc::vec![40];
        assert!(
            p.validate(200, 10).is_err(),
            "origin 140 collides with the next retrain"
        );
        assert!(plan().validate(154, 10).is_err(), "last window runs off the data");
        assert!(plan().validate(200, 101).is_err(), "not enough history");
        let mut p = plan();
        p.trials = 0;
        assert!(p.validate(200, 10).is_err());
    }

    #[test]
    fn aggregation_pools_cells() {
        let cell = |v: f64| BacktestCell {
            retrain_time: 0,
            trial: 0,
            forecast_time: 0,
            scores: alloc::vec![ScoreReport {
                metric: "crps".into(),
                value: v,
                per_series: Vec::new(),
            }],
            max_step_seen: 0,
        };
        let agg = aggregate(&[cell(1.0), cell(3.0)]);
        assert_eq!(agg.len(), 1);
        assert_eq!((agg[0].mean, agg[0].std, agg[0].count), (2.0, 1.0, 2));
    }

    #[test]
    fn trial_seeds_differ() {
        assert_ne!(trial_seed(5, 0), trial_seed(5, 1));
        assert_eq!(trial_seed(5, 0), 5);
    }
}
