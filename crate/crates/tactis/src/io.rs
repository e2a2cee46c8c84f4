//! CSV formats.
//!
//! Datasets are long tables `timestamp,series_id,value[,observed][,cov_1..]`
//! grouped by series; an empty value is allowed only on an unobserved row.
//! Forecast samples are `sample_id,series_id,timestamp,value`; scores are
//! `metric,series_id,value` with `all` marking the overall value.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use tactis_core::data::{TimeSeriesBatch, Timestamps};
use tactis_core::interp::InterpolationTask;
use tactis_core::metrics::{ForecastSamples, ScoreReport};

use crate::error::CliError;

fn open(path: &Path) -> Result<csv::Reader<File>, CliError> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

struct Columns {
    index: HashMap<String, usize>,
    /// `cov_1, cov_2, ...` in numeric order.
    covariates: Vec<String>,
}

impl Columns {
    fn new(path: &Path, r: &mut csv::Reader<File>, required: &[&str]) -> Result<Self, CliError> {
        let headers = r.headers().map_err(|e| io_err(path, e))?;
        let index: HashMap<String, usize> = headers.iter().enumerate().map(|(i, h)| (h.to_string(), i)).collect();
        for c in required {
            if !index.contains_key(*c) {
                return Err(io_err(
                    path,
                    format!(
                        "missing column `{c}` (header: {})",
                        headers.iter().collect::<Vec<_>>().join(",")
                    ),
                ));
            }
        }
        let mut covariates = Vec::new();
        while index.contains_key(&format!("cov_{}", covariates.len() + 1)) {
            covariates.push(format!("cov_{}", covariates.len() + 1));
        }
        if let Some(extra) = headers
            .iter()
            .find(|h| h.starts_with("cov_") && !covariates.iter().any(|c| c == h))
        {
            return Err(io_err(
                path,
                format!("covariate column `{extra}` breaks the cov_1, cov_2, ... sequence"),
            ));
        }
        Ok(Columns { index, covariates })
    }

    fn get<'r>(&self, rec: &'r csv::StringRecord, name: &str) -> Option<&'r str> {
        self.index.get(name).and_then(|&i| rec.get(i))
    }
}

fn parse<T: std::str::FromStr>(path: &Path, line: u64, column: &str, raw: &str) -> Result<T, CliError> {
    raw.parse()
        .map_err(|_| io_err(path, format!("line {line}: column `{column}`: cannot parse `{raw}`")))
}

fn parse_observed(path: &Path, line: u64, raw: &str) -> Result<bool, CliError> {
    match raw {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        _ => Err(io_err(
            path,
            format!("line {line}: column `observed`: expected 0 or 1, got `{raw}`"),
        )),
    }
}

struct SeriesRows {
    id: usize,
    time: Vec<f64>,
    value: Vec<f64>,
    observed: Vec<bool>,
    cov: Vec<f64>,
}

/// Reads rows keyed by an optional leading group column (`task`).
fn read_grouped(path: &Path, group: Option<&str>) -> Result<Vec<(usize, Vec<SeriesRows>, usize)>, CliError> {
    let mut r = open(path)?;
    let mut required = vec!["series_id", "timestamp", "value"];
    required.extend(group);
    let cols = Columns::new(path, &mut r, &required)?;
    let d = cols.covariates.len();
    let mut groups: Vec<(usize, Vec<SeriesRows>)> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let g = match group {
            Some(c) => parse(path, line, c, cols.get(&rec, c).unwrap_or(""))?,
            None => 0,
        };
        let id: usize = parse(path, line, "series_id", cols.get(&rec, "series_id").unwrap_or(""))?;
        let t: f64 = parse(path, line, "timestamp", cols.get(&rec, "timestamp").unwrap_or(""))?;
        let mut cov = Vec::with_capacity(cols.covariates.len());
        for c in &cols.covariates {
            cov.push(parse::<f64>(path, line, c, cols.get(&rec, c).unwrap_or(""))?);
        }
        let observed = match cols.get(&rec, "observed") {
            Some(raw) => parse_observed(path, line, raw)?,
            None => true,
        };
        let raw = cols.get(&rec, "value").unwrap_or("");
        let v: f64 = if raw.is_empty() && !observed {
            0.0
        } else {
            parse(path, line, "value", raw)?
        };
        if observed && !v.is_finite() {
            return Err(io_err(
                path,
                format!("line {line}: observed value `{raw}` is not finite"),
            ));
        }
        if !t.is_finite() {
            return Err(io_err(path, format!("line {line}: timestamp `{t}` is not finite")));
        }
        if groups.last().is_none_or(|(last, _)| *last != g) {
            if groups.iter().any(|(x, _)| *x == g) {
                return Err(io_err(
                    path,
                    format!("line {line}: rows of {} {g} are not contiguous", group.unwrap_or("")),
                ));
            }
            groups.push((g, Vec::new()));
        }
        let series = &mut groups.last_mut().expect("pushed above").1;
        if series.last().is_none_or(|s| s.id != id) {
            if series.iter().any(|s| s.id == id) {
                return Err(io_err(
                    path,
                    format!("line {line}: rows of series {id} are not contiguous"),
                ));
            }
            series.push(SeriesRows {
                id,
                time: Vec::new(),
                value: Vec::new(),
                observed: Vec::new(),
                cov: Vec::new(),
            });
        }
        let s = series.last_mut().expect("pushed above");
        if s.time.last().is_some_and(|&p| t <= p) {
            return Err(io_err(
                path,
                format!("line {line}: timestamps of series {id} must increase"),
            ));
        }
        s.time.push(t);
        s.value.push(v);
        s.observed.push(observed);
        s.cov.extend(cov);
    }
    if groups.is_empty() {
        return Err(io_err(path, "no data rows"));
    }
    Ok(groups.into_iter().map(|(g, rows)| (g, rows, d)).collect())
}

fn to_batch(path: &Path, rows: Vec<SeriesRows>, d: usize) -> Result<TimeSeriesBatch, CliError> {
    let n = rows.len();
    let l = rows[0].time.len();
    if let Some(s) = rows.iter().find(|s| s.time.len() != l) {
        return Err(io_err(
            path,
            format!(
                "series {} has {} rows, series {} has {l}",
                s.id,
                s.time.len(),
                rows[0].id
            ),
        ));
    }
    let aligned = rows.iter().all(|s| s.time == rows[0].time);
    let timestamps = if aligned {
        Timestamps::Aligned(rows[0].time.clone())
    } else {
        Timestamps::PerSeries(rows.iter().map(|s| s.time.clone()).collect())
    };
    let ids = rows.iter().map(|s| s.id).collect();
    let values = rows.iter().flat_map(|s| s.value.iter().copied()).collect();
    let mask = rows.iter().flat_map(|s| s.observed.iter().copied()).collect();
    let cov = rows.iter().flat_map(|s| s.cov.iter().copied()).collect();
    let mut b = TimeSeriesBatch::new(n, l, values, mask, cov, d, timestamps)?;
    b.set_series_ids(ids)?;
    Ok(b)
}

pub fn read_dataset(path: &Path) -> Result<TimeSeriesBatch, CliError> {
    let (_, rows, d) = read_grouped(path, None)?.remove(0);
    to_batch(path, rows, d)
}

fn dataset_header(prefix: &[&str], b: &TimeSeriesBatch) -> Vec<String> {
    let mut h: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    h.extend(["timestamp", "series_id", "value", "observed"].map(String::from));
    h.extend((1..=b.cov_dim()).map(|k| format!("cov_{k}")));
    h
}

fn dataset_rows(
    b: &TimeSeriesBatch,
    prefix: &[String],
    w: &mut csv::Writer<File>,
    path: &Path,
) -> Result<(), CliError> {
    for i in 0..b.num_series() {
        for j in 0..b.len() {
            let mut rec = prefix.to_vec();
            rec.extend([
                b.timestamps().at(i, j).to_string(),
                b.series_ids()[i].to_string(),
                b.value(i, j).to_string(),
                u8::from(b.is_observed(i, j)).to_string(),
            ]);
            let c = (i * b.len() + j) * b.cov_dim();
            rec.extend(b.covariates()[c..c + b.cov_dim()].iter().map(f64::to_string));
            w.write_record(&rec).map_err(|e| io_err(path, e))?;
        }
    }
    Ok(())
}

pub fn write_dataset(path: &Path, b: &TimeSeriesBatch) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(dataset_header(&[], b)).map_err(|e| io_err(path, e))?;
    dataset_rows(b, &[], &mut w, path)?;
    w.flush().map_err(|e| io_err(path, e))
}

/// Interpolation tasks as one dataset table with a leading `task` column;
/// gap rows are unobserved but keep their realized values.
pub fn write_tasks(path: &Path, tasks: &[InterpolationTask]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let first = &tasks
        .first()
        .ok_or_else(|| CliError::Data("no tasks to write".into()))?
        .window;
    w.write_record(dataset_header(&["task"], first))
        .map_err(|e| io_err(path, e))?;
    for (k, t) in tasks.iter().enumerate() {
        dataset_rows(&t.window, &[k.to_string()], &mut w, path)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_tasks(path: &Path) -> Result<Vec<TimeSeriesBatch>, CliError> {
    read_grouped(path, Some("task"))?
        .into_iter()
        .map(|(_, rows, d)| to_batch(path, rows, d))
        .collect()
}

pub fn write_samples(path: &Path, f: &ForecastSamples) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["sample_id", "series_id", "timestamp", "value"])
        .map_err(|e| io_err(path, e))?;
    for s in 0..f.num_samples {
        for (i, id) in f.series_ids.iter().enumerate() {
            for (j, t) in f.timestamps.iter().enumerate() {
                w.write_record([s.to_string(), id.to_string(), t.to_string(), f.get(s, i, j).to_string()])
                    .map_err(|e| io_err(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_samples(path: &Path) -> Result<ForecastSamples, CliError> {
    let mut r = open(path)?;
    let cols = Columns::new(path, &mut r, &["sample_id", "series_id", "timestamp", "value"])?;
    let mut cells: HashMap<(usize, usize, u64), f64> = HashMap::new();
    let (mut ids, mut times, mut samples) = (Vec::new(), Vec::<f64>::new(), 0);
    for rec in r.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let s: usize = parse(path, line, "sample_id", cols.get(&rec, "sample_id").unwrap_or(""))?;
        let id: usize = parse(path, line, "series_id", cols.get(&rec, "series_id").unwrap_or(""))?;
        let t: f64 = parse(path, line, "timestamp", cols.get(&rec, "timestamp").unwrap_or(""))?;
        let v: f64 = parse(path, line, "value", cols.get(&rec, "value").unwrap_or(""))?;
        if !ids.contains(&id) {
            ids.push(id);
        }
        if !times.contains(&t) {
            times.push(t);
        }
        samples = samples.max(s + 1);
        if cells.insert((s, id, t.to_bits()), v).is_some() {
            return Err(io_err(
                path,
                format!("line {line}: duplicate cell (sample {s}, series {id}, timestamp {t})"),
            ));
        }
    }
    let expected = samples * ids.len() * times.len();
    if cells.len() != expected || expected == 0 {
        return Err(io_err(
            path,
            format!(
                "{} cells do not form a full {samples} × {} × {} grid",
                cells.len(),
                ids.len(),
                times.len()
            ),
        ));
    }
    let mut values = Vec::with_capacity(expected);
    for s in 0..samples {
        for &id in &ids {
            for t in &times {
                values.push(cells[&(s, id, t.to_bits())]);
            }
        }
    }
    Ok(ForecastSamples::new(samples, ids, times, values)?)
}

/// Realized values of every forecast cell, looked up by series id and timestamp.
pub fn truth_for(f: &ForecastSamples, data: &TimeSeriesBatch) -> Result<Vec<f64>, CliError> {
    let mut out = Vec::with_capacity(f.num_series() * f.num_steps());
    for &id in &f.series_ids {
        let i = data
            .series_ids()
            .iter()
            .position(|&x| x == id)
            .ok_or_else(|| CliError::Data(format!("series {id} is not in the truth data")))?;
        for &t in &f.timestamps {
            let j = (0..data.len())
                .find(|&j| data.timestamps().at(i, j) == t)
                .ok_or_else(|| CliError::Data(format!("series {id} has no value at timestamp {t}")))?;
            out.push(data.value(i, j));
        }
    }
    Ok(out)
}

pub fn write_scores(path: &Path, reports: &[ScoreReport]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["metric", "series_id", "value"])
        .map_err(|e| io_err(path, e))?;
    for r in reports {
        w.write_record([r.metric.clone(), "all".into(), r.value.to_string()])
            .map_err(|e| io_err(path, e))?;
        for (id, v) in &r.per_series {
            w.write_record([r.metric.clone(), id.to_string(), v.to_string()])
                .map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Any table of pre-formatted cells.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| io_err(path, e))
}
