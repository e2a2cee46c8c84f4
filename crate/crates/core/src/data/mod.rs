//! Time series containers, masking patterns, windowing, standardization and
//! synthetic generators.

mod standardize;
mod synthetic;
mod window;

use alloc::string::String;
use alloc::vec::Vec;

pub use standardize::{destandardize_value, standardize, StandardizationState};
pub use synthetic::{generate_correlated_gaussian, generate_stochastic_volatility, StochasticVolatility, SvState};
pub use window::{sample_training_window, MaskPattern, WindowSampler, WindowSpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("series {series} has no observed tokens")]
    NoObservedTokens { series: usize },
    #[error("timestamps must be strictly increasing (position {position})")]
    NonMonotoneTimestamps { position: usize },
    #[error("{field} has {got} entries, expected {expected}")]
    Length {
        field: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("window of length {window} does not fit in {available} time steps")]
    TooShort { window: usize, available: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Time stamps of a batch: one shared axis, or one axis per series.
#[derive(Debug, Clone, PartialEq)]
pub enum Timestamps {
    Aligned(Vec<f64>),
    PerSeries(Vec<Vec<f64>>),
}

impl Timestamps {
    pub fn is_aligned(&self) -> bool {
        matches!(self, Timestamps::Aligned(_))
    }

    /// Time stamp of step `j` of series `i`.
    pub fn at(&self, series: usize, step: usize) -> f64 {
        match self {
            Timestamps::Aligned(t) => t[step],
            Timestamps::PerSeries(t) => t[series][step],
        }
    }
}

fn check_increasing(t: &[f64]) -> Result<(), DataError> {
    for (k, w) in t.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(DataError::NonMonotoneTimestamps { position: k + 1 });
        }
    }
    Ok(())
}

/// Values, observation mask, covariates and time stamps of `n` series over
/// `l` steps. Matrices are stored series-major (`i * l + j`); covariates are
/// `n × l × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesBatch {
    n: usize,
    l: usize,
    d: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
    covariates: Vec<f64>,
    timestamps: Timestamps,
    series_ids: Vec<usize>,
}

impl TimeSeriesBatch {
    pub fn new(
        n: usize,
        l: usize,
        values: Vec<f64>,
        mask: Vec<bool>,
        covariates: Vec<f64>,
        cov_dim: usize,
        timestamps: Timestamps,
    ) -> Result<Self, DataError> {
        let expect = |field, expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(DataError::Length { field, expected, got })
            }
        };
        expect("values", n * l, values.len())?;
        expect("mask", n * l, mask.len())?;
        expect("covariates", n * l * cov_dim, covariates.len())?;
        match &timestamps {
            Timestamps::Aligned(t) => {
                expect("timestamps", l, t.len())?;
                check_increasing(t)?;
            }
            Timestamps::PerSeries(ts) => {
                expect("timestamp series", n, ts.len())?;
                for t in ts {
                    expect("timestamps", l, t.len())?;
                    check_increasing(t)?;
                }
            }
        }
        Ok(TimeSeriesBatch {
            n,
            l,
            d: cov_dim,
            values,
            mask,
            covariates,
            timestamps,
            series_ids: (0..n).collect(),
        })
    }

    /// Fully observed series on the time axis `0, 1, ..., l-1`, without covariates.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DataError> {
        let n = rows.len();
        let l = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(n * l);
        for r in rows {
            if r.len() != l {
                return Err(DataError::Length {
                    field: "row",
                    expected: l,
                    got: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        let timestamps = Timestamps::Aligned((0..l).map(|j| j as f64).collect());
        Self::new(n, l, values, alloc::vec![true; n * l], Vec::new(), 0, timestamps)
    }

    pub fn num_series(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.l
    }

    pub fn is_empty(&self) -> bool {
        self.l == 0
    }

    pub fn cov_dim(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn timestamps(&self) -> &Timestamps {
        &self.timestamps
    }

    /// Identity of each row; drives the learned per-series embedding.
    pub fn series_ids(&self) -> &[usize] {
        &self.series_ids
    }

    pub fn set_series_ids(&mut self, ids: Vec<usize>) -> Result<(), DataError> {
        if ids.len() != self.n {
            return Err(DataError::Length {
                field: "series ids",
                expected: self.n,
                got: ids.len(),
            });
        }
        self.series_ids = ids;
        Ok(())
    }

    pub fn value(&self, series: usize, step: usize) -> f64 {
        self.values[series * self.l + step]
    }

    pub fn is_observed(&self, series: usize, step: usize) -> bool {
        self.mask[series * self.l + step]
    }

    pub fn series(&self, series: usize) -> &[f64] {
        &self.values[series * self.l..(series + 1) * self.l]
    }

    pub fn set_mask(&mut self, mask: Vec<bool>) -> Result<(), DataError> {
        if mask.len() != self.n * self.l {
            return Err(DataError::Length {
                field: "mask",
                expected: self.n * self.l,
                got: mask.len(),
            });
        }
        self.mask = mask;
        Ok(())
    }

    pub fn num_missing(&self) -> usize {
        self.mask.iter().filter(|m| !**m).count()
    }

    /// Steps `[start, start + len)` of every series.
    pub fn slice_time(&self, start: usize, len: usize) -> Result<Self, DataError> {
        if start + len > self.l {
            return Err(DataError::TooShort {
                window: start + len,
                available: self.l,
            });
        }
        let (n, d) = (self.n, self.d);
        let mut values = Vec::with_capacity(n * len);
        let mut mask = Vec::with_capacity(n * len);
        let mut covariates = Vec::with_capacity(n * len * d);
        for i in 0..n {
            let r = i * self.l + start..i * self.l + start + len;
            values.extend_from_slice(&self.values[r.clone()]);
            mask.extend_from_slice(&self.mask[r.clone()]);
            covariates.extend_from_slice(&self.covariates[r.start * d..r.end * d]);
        }
        let timestamps = match &self.timestamps {
            Timestamps::Aligned(t) => Timestamps::Aligned(t[start..start + len].to_vec()),
            Timestamps::PerSeries(ts) => {
                Timestamps::PerSeries(ts.iter().map(|t| t[start..start + len].to_vec()).collect())
            }
        };
        Ok(TimeSeriesBatch {
            n,
            l: len,
            d,
            values,
            mask,
            covariates,
            timestamps,
            series_ids: self.series_ids.clone(),
        })
    }

    /// Rows `rows` (in that order), keeping their series ids.
    pub fn select_series(&self, rows: &[usize]) -> Self {
        let (l, d) = (self.l, self.d);
        let mut values = Vec::with_capacity(rows.len() * l);
        let mut mask = Vec::with_capacity(rows.len() * l);
        let mut covariates = Vec::with_capacity(rows.len() * l * d);
        for &i in rows {
            values.extend_from_slice(&self.values[i * l..(i + 1) * l]);
            mask.extend_from_slice(&self.mask[i * l..(i + 1) * l]);
            covariates.extend_from_slice(&self.covariates[i * l * d..(i + 1) * l * d]);
        }
        let timestamps = match &self.timestamps {
            Timestamps::Aligned(t) => Timestamps::Aligned(t.clone()),
            Timestamps::PerSeries(ts) => Timestamps::PerSeries(rows.iter().map(|&i| ts[i].clone()).collect()),
        };
        TimeSeriesBatch {
            n: rows.len(),
            l,
            d,
            values,
            mask,
            covariates,
            timestamps,
            series_ids: rows.iter().map(|&i| self.series_ids[i]).collect(),
        }
    }

    /// Index of the first step whose (aligned) time stamp is `>= t`.
    pub fn index_at_or_after(&self, t: f64) -> usize {
        match &self.timestamps {
            Timestamps::Aligned(ts) => ts.partition_point(|&x| x < t),
            Timestamps::PerSeries(ts) => ts.first().map_or(0, |s| s.partition_point(|&x| x < t)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rejects_non_monotone_timestamps() {
        let err = TimeSeriesBatch::new(
            1,
            3,
            vec![0.0; 3],
            vec![true; 3],
            vec![],
            0,
            Timestamps::Aligned(vec![0.0, 2.0, 1.0]),
        )
        .unwrap_err();
        assert_eq!(err, DataError::NonMonotoneTimestamps { position: 2 });
    }

    #[test]
    fn rejects_mismatched_lengths() {
        let err = TimeSeriesBatch::new(
            2,
            2,
            vec![0.0; 4],
            vec![true; 3],
            vec![],
            0,
            Timestamps::Aligned(vec![0.0, 1.0]),
        );
        assert!(matches!(err, Err(DataError::Length { field: "mask", .. })));
    }

    #[test]
    fn selecting_series_keeps_ids() {
        let b = TimeSeriesBatch::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let s = b.select_series(&[2, 0]);
        assert_eq!(s.series_ids(), &[2, 0]);
        assert_eq!(s.values(), &[5.0, 6.0, 1.0, 2.0]);
        let w = b.slice_time(1, 1).unwrap();
        assert_eq!(w.values(), &[2.0, 4.0, 6.0]);
        assert_eq!(w.timestamps(), &Timestamps::Aligned(vec![1.0]));
    }
}
