use alloc::format;
use alloc::vec::Vec;
use core::cell::Cell;

use rand::Rng;

use super::{DataError, TimeSeriesBatch};
use crate::rng::RngStream;

/// Which tokens of a window are hidden from the model.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskPattern {
    /// The last `prediction_length` steps of every series are missing.
    ForecastSuffix,
    /// `gap_length` steps starting at `offset` are missing in every series.
    InterpolationGap { offset: usize, gap_length: usize },
    /// Observation flags, either per step (shared by all series) or
    /// series-major over the whole window.
    Explicit(Vec<bool>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSpec {
    pub history_length: usize,
    pub prediction_length: usize,
    pub pattern: MaskPattern,
}

impl WindowSpec {
    pub fn forecast(history_length: usize, prediction_length: usize) -> Self {
        WindowSpec {
            history_length,
            prediction_length,
            pattern: MaskPattern::ForecastSuffix,
        }
    }

    /// A window of `before + gap + after` steps with the gap in between.
    pub fn interpolation(before: usize, gap: usize, after: usize) -> Self {
        WindowSpec {
            history_length: before + after,
            prediction_length: gap,
            pattern: MaskPattern::InterpolationGap {
                offset: before,
                gap_length: gap,
            },
        }
    }

    pub fn window_length(&self) -> usize {
        self.history_length + self.prediction_length
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let w = self.window_length();
        if self.history_length == 0 || self.prediction_length == 0 {
            return Err(DataError::InvalidParameter(
                "history and prediction lengths must be positive".into(),
            ));
        }
        if let MaskPattern::InterpolationGap { offset, gap_length } = self.pattern {
            if offset + gap_length > w || gap_length == 0 {
                return Err(DataError::InvalidParameter(format!(
                    "gap [{offset}, {}) does not fit in a window of {w}",
                    offset + gap_length
                )));
            }
        }
        Ok(())
    }

    /// Observation mask for `n` series over one window.
    pub fn mask(&self, n: usize) -> Result<Vec<bool>, DataError> {
        self.validate()?;
        let w = self.window_length();
        let row: Vec<bool> = match &self.pattern {
            MaskPattern::ForecastSuffix => (0..w).map(|j| j < self.history_length).collect(),
            MaskPattern::InterpolationGap { offset, gap_length } => {
                (0..w).map(|j| j < *offset || j >= offset + gap_length).collect()
            }
            MaskPattern::Explicit(m) if m.len() == n * w => return Ok(m.clone()),
            MaskPattern::Explicit(m) if m.len() == w => m.clone(),
            MaskPattern::Explicit(m) => {
                return Err(DataError::Length {
                    field: "explicit mask",
                    expected: n * w,
                    got: m.len(),
                })
            }
        };
        Ok(row.iter().copied().cycle().take(n * w).collect())
    }
}

/// Draws windows uniformly from the steps `[0, end)` of a dataset and
/// remembers the furthest step it ever handed out.
#[derive(Debug)]
pub struct WindowSampler<'a> {
    data: &'a TimeSeriesBatch,
    end: usize,
    max_step: Cell<Option<usize>>,
}

impl<'a> WindowSampler<'a> {
    pub fn new(data: &'a TimeSeriesBatch, end: usize) -> Self {
        WindowSampler {
            data,
            end: end.min(data.len()),
            max_step: Cell::new(None),
        }
    }

    pub fn data(&self) -> &'a TimeSeriesBatch {
        self.data
    }

    pub fn end(&self) -> usize {
        self.end
    }

    /// Largest step index contained in any window produced so far.
    pub fn max_step_seen(&self) -> Option<usize> {
        self.max_step.get()
    }

    /// Number of distinct window start positions.
    pub fn num_starts(&self, spec: &WindowSpec) -> usize {
        (self.end + 1).saturating_sub(spec.window_length())
    }

    pub fn window_at(&self, start: usize, spec: &WindowSpec) -> Result<TimeSeriesBatch, DataError> {
        let w = spec.window_length();
        if start + w > self.end {
            return Err(DataError::TooShort {
                window: start + w,
                available: self.end,
            });
        }
        let mut win = self.data.slice_time(start, w)?;
        win.set_mask(spec.mask(win.num_series())?)?;
        let last = start + w - 1;
        self.max_step
            .set(Some(self.max_step.get().map_or(last, |m| m.max(last))));
        Ok(win)
    }

    pub fn sample(&self, spec: &WindowSpec, rng: &mut RngStream) -> Result<TimeSeriesBatch, DataError> {
        let starts = self.num_starts(spec);
        if starts == 0 {
            return Err(DataError::TooShort {
                window: spec.window_length(),
                available: self.end,
            });
        }
        let start = rng.random_range(0..starts);
        self.window_at(start, spec)
    }
}

/// Uniformly random complete window of `dataset`, masked per `spec`.
pub fn sample_training_window(
    dataset: &TimeSeriesBatch,
    spec: &WindowSpec,
    rng: &mut RngStream,
) -> Result<TimeSeriesBatch, DataError> {
    WindowSampler::new(dataset, dataset.len()).sample(spec, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn mask_rows(mask: &[bool], len: usize) -> Vec<Vec<bool>> {
        mask.chunks(len).map(|c| c.to_vec()).collect()
    }

    fn ramp(n: usize, l: usize) -> TimeSeriesBatch {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..l).map(|j| (i * 100 + j) as f64).collect()).collect();
        TimeSeriesBatch::from_rows(&rows).unwrap()
    }

    #[test]
    fn forecast_suffix_mask() {
        let spec = WindowSpec::forecast(3, 2);
        let mut rng = RngStream::from_seed(0);
        let w = sample_training_window(&ramp(2, 5), &spec, &mut rng).unwrap();
        assert_eq!(mask_rows(w.mask(), 5), vec![vec![true, true, true, false, false]; 2]);
    }

    #[test]
    fn interpolation_gap_hides_center() {
        let spec = WindowSpec::interpolation(50, 25, 50);
        let mut rng = RngStream::from_seed(1);
        let w = sample_training_window(&ramp(1, 300), &spec, &mut rng).unwrap();
        assert_eq!(w.len(), 125);
        let hidden: Vec<usize> = (0..125).filter(|&j| !w.is_observed(0, j)).collect();
        assert_eq!(hidden, (50..75).collect::<Vec<_>>());
    }

    #[test]
    fn window_longer_than_dataset_fails() {
        let spec = WindowSpec::forecast(4, 3);
        let mut rng = RngStream::from_seed(2);
        assert!(matches!(
            sample_training_window(&ramp(1, 5), &spec, &mut rng),
            Err(DataError::TooShort { .. })
        ));
    }

    #[test]
    fn windows_are_contiguous_and_bounded() {
        let data = ramp(2, 40);
        let sampler = WindowSampler::new(&data, 20);
        let spec = WindowSpec::forecast(4, 2);
        let mut rng = RngStream::from_seed(3);
        for _ in 0..200 {
            let w = sampler.sample(&spec, &mut rng).unwrap();
            let first = w.value(0, 0);
            for j in 0..6 {
                assert_eq!(w.value(0, j), first + j as f64);
                assert_eq!(w.value(1, j), first + 100.0 + j as f64);
            }
            assert_eq!(w.mask(), spec.mask(2).unwrap().as_slice());
        }
        assert_eq!(sampler.max_step_seen(), Some(19));
    }

    #[test]
    fn explicit_masks_are_checked() {
        let spec = WindowSpec {
            history_length: 2,
            prediction_length: 1,
            pattern: MaskPattern::Explicit(vec![true, false, true]),
        };
        assert_eq!(spec.mask(2).unwrap(), vec![true, false, true, true, false, true]);
        let bad = WindowSpec {
            pattern: MaskPattern::Explicit(vec![true; 4]),
            ..spec
        };
        assert!(bad.mask(2).is_err());
        assert!(WindowSpec::interpolation(2, 0, 2).validate().is_err());
    }

    #[test]
    fn sampling_is_uniform_over_starts() {
        let data = ramp(1, 8);
        let spec = WindowSpec::forecast(2, 1);
        let sampler = WindowSampler::new(&data, 8);
        let mut rng = RngStream::from_seed(4);
        let mut counts = vec![0usize; 6];
        for _ in 0..6000 {
            let w = sampler.sample(&spec, &mut rng).unwrap();
            counts[w.value(0, 0) as usize] += 1;
        }
        for c in counts {
            assert!((850..1150).contains(&c), "{c}");
        }
    }
}
