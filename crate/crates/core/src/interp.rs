//! Gap-filling benchmark: a model against straight-line interpolation.

use alloc::vec::Vec;

use crate::data::{DataError, TimeSeriesBatch, WindowSpec};
use crate::metrics::{energy_score, ForecastSamples};
use crate::model::Model;
use crate::rng::RngStream;
use crate::train::forecast;
use crate::ModelError;

/// Observed steps on each side of the gap.
pub const CONTEXT: usize = 50;
pub const GAP: usize = 25;
pub const WINDOW: usize = 2 * CONTEXT + GAP;

pub fn interpolation_spec() -> WindowSpec {
    WindowSpec::interpolation(CONTEXT, GAP, CONTEXT)
}

/// A window with its middle hidden, and what was hidden.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationTask {
    /// Masked window; the gap values are kept but never read by the model.
    pub window: TimeSeriesBatch,
    /// Realized gap values, series-major `n × GAP`.
    pub truth: Vec<f64>,
}

impl InterpolationTask {
    /// Task over the steps `[start, start + WINDOW)` of `data`.
    pub fn at(data: &TimeSeriesBatch, start: usize) -> Result<Self, DataError> {
        let mut window = data.slice_time(start, WINDOW)?;
        window.set_mask(interpolation_spec().mask(window.num_series())?)?;
        let truth = (0..window.num_series())
            .flat_map(|i| window.series(i)[CONTEXT..CONTEXT + GAP].to_vec())
            .collect();
        Ok(InterpolationTask { window, truth })
    }

    /// Last observed value before and first observed value after the gap.
    pub fn boundaries(&self, series: usize) -> (f64, f64) {
        let row = self.window.series(series);
        (row[CONTEXT - 1], row[CONTEXT + GAP])
    }

    fn gap_timestamps(&self) -> Vec<f64> {
        (CONTEXT..CONTEXT + GAP)
            .map(|j| self.window.timestamps().at(0, j))
            .collect()
    }
}

/// `count` back-to-back tasks from the start of `data`.
pub fn tiled_tasks(data: &TimeSeriesBatch, count: usize) -> Result<Vec<InterpolationTask>, DataError> {
    if count * WINDOW > data.len() {
        return Err(DataError::TooShort {
            window: count * WINDOW,
            available: data.len(),
        });
    }
    (0..count).map(|k| InterpolationTask::at(data, k * WINDOW)).collect()
}

/// Straight line between the boundary values, endpoints excluded: offset
/// `k = 1..=G` gets `a + (b - a) k / (G + 1)`. One sample, since every draw
/// would be the same.
pub fn dummy_interpolate(task: &InterpolationTask) -> ForecastSamples {
    let n = task.window.num_series();
    let mut values = Vec::with_capacity(n * GAP);
    for i in 0..n {
        let (a, b) = task.boundaries(i);
        values.extend((1..=GAP).map(|k| a + (b - a) * k as f64 / (GAP + 1) as f64));
    }
    ForecastSamples::new(1, task.window.series_ids().to_vec(), task.gap_timestamps(), values)
        .expect("shape is n × GAP by construction")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedScore {
    pub model: f64,
    pub dummy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpReport {
    /// Energy scores per task.
    pub scores: Vec<PairedScore>,
    /// Mean absolute jump from the last observed value to the first gap
    /// sample, for the model's own samples and for samples of another task.
    pub boundary_jump: f64,
    pub shuffled_jump: f64,
}

impl InterpReport {
    pub fn model_mean(&self) -> f64 {
        self.scores.iter().map(|s| s.model).sum::<f64>() / self.scores.len() as f64
    }

    pub fn dummy_mean(&self) -> f64 {
        self.scores.iter().map(|s| s.dummy).sum::<f64>() / self.scores.len() as f64
    }
}

fn mean_jump(task: &InterpolationTask, samples: &ForecastSamples) -> f64 {
    let n = samples.num_series();
    let mut total = 0.0;
    for i in 0..n {
        let (a, _) = task.boundaries(i);
        total += samples.cell(i, 0).iter().map(|x| (x - a).abs()).sum::<f64>();
    }
    total / (n * samples.num_samples) as f64
}

/// Scores model samples and the dummy against the realized gaps.
pub fn run_interp_benchmark(
    model: &Model,
    tasks: &[InterpolationTask],
    num_samples: usize,
    rng: &mut RngStream,
) -> Result<InterpReport, ModelError> {
    if tasks.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut samples = Vec::with_capacity(tasks.len());
    let mut scores = Vec::with_capacity(tasks.len());
    for task in tasks {
        let s = forecast(model, &task.window, num_samples, &mut rng.split("task"))?;
        scores.push(PairedScore {
            model: energy_score(&s, &task.truth)?,
            dummy: energy_score(&dummy_interpolate(task), &task.truth)?,
        });
        samples.push(s);
    }
    let m = tasks.len() as f64;
    let boundary_jump = tasks.iter().zip(&samples).map(|(t, s)| mean_jump(t, s)).sum::<f64>() / m;
    let shuffled_jump = tasks
        .iter()
        .enumerate()
        .map(|(k, t)| mean_jump(t, &samples[(k + 1) % samples.len()]))
        .sum::<f64>()
        / m;
    Ok(InterpReport {
        scores,
        boundary_jump,
        shuffled_jump,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn task_with(a: f64, b: f64) -> InterpolationTask {
        let mut row = vec![a; WINDOW];
        row[CONTEXT + GAP..].iter_mut().for_each(|x| *x = b);
        InterpolationTask::at(&TimeSeriesBatch::from_rows(&[row]).unwrap(), 0).unwrap()
    }

    #[test]
    fn dummy_examples() {
        let zero = dummy_interpolate(&task_with(0.0, 0.0));
        assert!(zero.values.iter().all(|&v| v == 0.0));
        let ramp = dummy_interpolate(&task_with(0.0, 24.0));
        for k in 1..=GAP {
            assert_eq!(ramp.values[k - 1], 24.0 * k as f64 / 26.0);
        }
        assert_eq!(ramp, dummy_interpolate(&task_with(0.0, 24.0)));
    }

    #[test]
    fn dummy_is_exact_on_lines() {
        let row: Vec<f64> = (0..WINDOW).map(|j| 0.5 * j as f64 - 3.0).collect();
        let task = InterpolationTask::at(&TimeSeriesBatch::from_rows(&[row]).unwrap(), 0).unwrap();
        assert!(energy_score(&dummy_interpolate(&task), &task.truth).unwrap() < 1e-12);
    }

    #[test]
    fn task_geometry() {
        let t = task_with(1.0, 2.0);
        assert_eq!(t.window.len(), 125);
        assert_eq!(t.window.num_missing(), 25);
        assert_eq!(t.truth.len(), 25);
        assert!(t.window.is_observed(0, 49) && !t.window.is_observed(0, 50));
        assert!(!t.window.is_observed(0, 74) && t.window.is_observed(0, 75));
        assert_eq!(t.boundaries(0), (1.0, 2.0));
    }

    #[test]
    fn tiling_needs_enough_data() {
        let data = TimeSeriesBatch::from_rows(&[vec![0.0; 3 * WINDOW]]).unwrap();
        assert_eq!(tiled_tasks(&data, 3).unwrap().len(), 3);
        assert!(tiled_tasks(&data, 4).is_err());
    }
}
