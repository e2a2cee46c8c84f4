//! Command-line entry point.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use tactis_core::backtest::run_backtest;
use tactis_core::data::{
    generate_correlated_gaussian, generate_stochastic_volatility, standardize, MaskPattern, TimeSeriesBatch, WindowSpec,
};
use tactis_core::interp::{interpolation_spec, run_interp_benchmark, tiled_tasks, InterpolationTask, CONTEXT, GAP};
use tactis_core::metrics::{copula_uniformity_report, score_forecast};
use tactis_core::rng::RngStream;
use tactis_core::train::{forecast, forecast_spec, train, Checkpoint};

use crate::config::{keys_help, Config};
use crate::error::CliError;
use crate::{checkpoint, io};

const EXIT_CODES: &str = "Exit codes: 0 success, 2 configuration error, 3 data error (missing or malformed files, shape mismatches), 4 numerical failure. Errors print one line `error[config|data|numerical]: message` to stderr.";

fn after_help() -> String {
    format!("{EXIT_CODES}\n\n{}", keys_help())
}

#[derive(Parser, Debug)]
#[command(name = "tactis", version, about = "Attentional-copula transformer for multivariate time series", after_help = after_help())]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Configuration file of dotted `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.bag_size=2`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Root seed (same as `--set seed=N`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".", global = true)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset to OUT/data.csv.
    #[command(after_help = after_help())]
    Generate {
        /// generate.process
        #[arg(long)]
        process: Option<String>,
        /// generate.length
        #[arg(long)]
        length: Option<usize>,
        /// generate.num_series
        #[arg(long)]
        num_series: Option<usize>,
    },
    /// Train on a dataset; writes OUT/checkpoint.json and OUT/history.csv.
    #[command(after_help = after_help())]
    Train {
        #[arg(long)]
        data: PathBuf,
        /// train.prediction_length
        #[arg(long)]
        prediction_length: Option<usize>,
        /// train.max_epochs
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Draw joint samples; writes OUT/samples.csv.
    #[command(after_help = after_help())]
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// sample.num_samples
        #[arg(long)]
        samples: Option<usize>,
        /// sample.origin
        #[arg(long, allow_negative_numbers = true)]
        origin: Option<i64>,
    },
    /// Score samples against realized values; writes OUT/scores.csv.
    #[command(after_help = after_help())]
    Evaluate {
        #[arg(long)]
        samples: PathBuf,
        /// Dataset holding the realized values.
        #[arg(long)]
        data: PathBuf,
    },
    /// Rolling retrain-and-forecast evaluation; writes OUT/backtest/*.csv
    /// and OUT/backtest_aggregate.csv.
    #[command(after_help = after_help())]
    Backtest {
        #[arg(long)]
        data: PathBuf,
    },
    /// Distances of the copula marginals from uniform; writes OUT/uniformity.csv.
    #[command(after_help = after_help())]
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Gap-filling benchmark against linear interpolation; writes
    /// OUT/tasks.csv, OUT/interp_scores.csv and OUT/interp_summary.csv.
    #[command(after_help = after_help())]
    Interp {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Held-out series the tasks are cut from.
        #[arg(long)]
        data: PathBuf,
    },
}

fn settings(common: &Common, flags: &[(&str, Option<String>)]) -> Result<Config, CliError> {
    let mut c = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for (k, v) in flags {
        if let Some(v) = v {
            c.set_str(&format!("{k}={v}"))?;
        }
    }
    for s in &common.set {
        c.set_str(s)?;
    }
    if let Some(seed) = common.seed {
        c.set_str(&format!("seed={seed}"))?;
    }
    Ok(c)
}

fn out_dir(common: &Common) -> Result<&Path, CliError> {
    std::fs::create_dir_all(&common.out).map_err(|e| CliError::Data(format!("{}: {e}", common.out.display())))?;
    Ok(&common.out)
}

fn quoted(s: &Option<String>) -> Option<String> {
    s.as_ref().map(|v| format!("\"{v}\""))
}

fn fully_observed(data: &TimeSeriesBatch) -> Result<(), CliError> {
    if data.num_missing() > 0 {
        return Err(CliError::Data(format!(
            "training data has {} unobserved cells; training needs complete series",
            data.num_missing()
        )));
    }
    Ok(())
}

/// Step where the hidden block of `spec` starts.
fn hidden_offset(spec: &WindowSpec) -> Result<usize, CliError> {
    match spec.pattern {
        MaskPattern::ForecastSuffix => Ok(spec.history_length),
        MaskPattern::InterpolationGap { offset, .. } => Ok(offset),
        MaskPattern::Explicit(_) => Err(CliError::Data(
            "explicit-mask checkpoints need a dataset with its own mask".into(),
        )),
    }
}

/// The window a checkpoint is applied to: the dataset itself when it carries
/// unobserved cells, otherwise a window of the training geometry whose hidden
/// block starts at `sample.origin`.
fn inference_window(c: &Config, ck: &Checkpoint, data: &TimeSeriesBatch) -> Result<TimeSeriesBatch, CliError> {
    if data.num_missing() > 0 {
        return Ok(data.clone());
    }
    let spec = &ck.window;
    let hidden = hidden_offset(spec)?;
    let origin = match c.int("sample.origin") {
        -1 => data.len().checked_sub(spec.window_length() - hidden),
        o => usize::try_from(o).ok(),
    }
    .ok_or_else(|| {
        CliError::Data(format!(
            "the data is too short for a window of {}",
            spec.window_length()
        ))
    })?;
    let start = origin
        .checked_sub(hidden)
        .ok_or_else(|| CliError::Data(format!("origin {origin} leaves less than {hidden} steps before it")))?;
    let mut w = data.slice_time(start, spec.window_length())?;
    w.set_mask(spec.mask(w.num_series())?)?;
    Ok(w)
}

fn model_series(data: &TimeSeriesBatch) -> usize {
    data.series_ids().iter().copied().max().map_or(0, |m| m + 1)
}

fn f(x: f64) -> String {
    x.to_string()
}

fn generate(c: &Config, out: &Path) -> Result<(), CliError> {
    let mut rng = RngStream::named(c.seed()?, "data");
    let length = c.usize("generate.length")?;
    let data = match c.string("generate.process") {
        "gaussian" => generate_correlated_gaussian(
            c.usize("generate.num_series")?,
            length,
            c.float("generate.correlation"),
            &mut rng,
        ),
        "stochvol" => generate_stochastic_volatility(
            length,
            c.float("generate.sv_mu"),
            c.float("generate.sv_phi"),
            c.float("generate.sv_sigma"),
            &mut rng,
        ),
        p => {
            return Err(CliError::Config(format!(
                "generate.process must be gaussian or stochvol, got `{p}`"
            )))
        }
    }
    .map_err(|e| CliError::Config(e.to_string()))?;
    io::write_dataset(&out.join("data.csv"), &data)
}

fn train_cmd(c: &Config, data_path: &Path, out: &Path) -> Result<(), CliError> {
    let data = io::read_dataset(data_path)?;
    fully_observed(&data)?;
    let model = c.model(model_series(&data), data.cov_dim())?;
    let tc = c.train(data.num_series())?;
    let spec = match c.string("train.window") {
        "forecast" => forecast_spec(c.usize("train.prediction_length")?, &tc),
        "interpolation" => interpolation_spec(),
        w => {
            return Err(CliError::Config(format!(
                "train.window must be forecast or interpolation, got `{w}`"
            )))
        }
    };
    let outcome = train(&data, &model, &tc, &spec)?;
    checkpoint::save(&out.join("checkpoint.json"), &outcome.checkpoint)?;
    let rows: Vec<Vec<String>> = outcome
        .history
        .iter()
        .map(|r| vec![r.epoch.to_string(), f(r.train_loss), f(r.validation_loss)])
        .collect();
    io::write_table(
        &out.join("history.csv"),
        &["epoch", "train_loss", "validation_loss"],
        &rows,
    )
}

fn sample_cmd(c: &Config, ck_path: &Path, data_path: &Path, out: &Path) -> Result<(), CliError> {
    let ck = checkpoint::load(ck_path)?;
    let data = io::read_dataset(data_path)?;
    let window = inference_window(c, &ck, &data)?;
    let model = ck.to_model()?;
    let mut rng = RngStream::named(c.seed()?, "sampling");
    let samples = forecast(&model, &window, c.usize("sample.num_samples")?, &mut rng)?;
    io::write_samples(&out.join("samples.csv"), &samples)
}

fn evaluate_cmd(samples_path: &Path, data_path: &Path, out: &Path) -> Result<(), CliError> {
    let samples = io::read_samples(samples_path)?;
    let data = io::read_dataset(data_path)?;
    let truth = io::truth_for(&samples, &data)?;
    io::write_scores(&out.join("scores.csv"), &score_forecast(&samples, &truth)?)
}

fn backtest_cmd(c: &Config, data_path: &Path, out: &Path) -> Result<(), CliError> {
    let data = io::read_dataset(data_path)?;
    fully_observed(&data)?;
    let plan = c.backtest_plan()?;
    let model = c.model(model_series(&data), data.cov_dim())?;
    let tc = c.train(data.num_series())?;
    let report = run_backtest(&data, &plan, &model, &tc, c.usize("sample.num_samples")?)?;
    let cells = out.join("backtest");
    std::fs::create_dir_all(&cells).map_err(|e| CliError::Data(format!("{}: {e}", cells.display())))?;
    for cell in &report.cells {
        let name = format!(
            "retrain{}_trial{}_origin{}.csv",
            cell.retrain_time, cell.trial, cell.forecast_time
        );
        io::write_scores(&cells.join(name), &cell.scores)?;
    }
    let rows: Vec<Vec<String>> = report
        .aggregate
        .iter()
        .map(|a| vec![a.metric.clone(), f(a.mean), f(a.std), a.count.to_string()])
        .collect();
    io::write_table(
        &out.join("backtest_aggregate.csv"),
        &["metric", "mean", "std", "cells"],
        &rows,
    )
}

fn diagnose_cmd(c: &Config, ck_path: &Path, data_path: &Path, out: &Path) -> Result<(), CliError> {
    let ck = checkpoint::load(ck_path)?;
    let data = io::read_dataset(data_path)?;
    let window = inference_window(c, &ck, &data)?;
    let model = ck.to_model()?;
    let (std, _) = standardize(&window)?;
    let mut rng = RngStream::named(c.seed()?, "diagnose");
    let report = copula_uniformity_report(&model, &std, c.usize("diagnose.num_samples")?, &mut rng)?;
    let l = window.len();
    let missing = (0..window.mask().len()).filter(|&t| !window.mask()[t]);
    let mut rows: Vec<Vec<String>> = missing
        .zip(&report.distances)
        .map(|(t, d)| {
            let (i, j) = (t / l, t % l);
            vec![
                window.series_ids()[i].to_string(),
                f(window.timestamps().at(i, j)),
                f(*d),
            ]
        })
        .collect();
    rows.push(vec!["mean".into(), String::new(), f(report.mean())]);
    io::write_table(
        &out.join("uniformity.csv"),
        &["series", "timestamp", "wasserstein"],
        &rows,
    )
}

fn interp_cmd(c: &Config, ck_path: &Path, data_path: &Path, out: &Path) -> Result<(), CliError> {
    let ck = checkpoint::load(ck_path)?;
    if ck.window != interpolation_spec() {
        return Err(CliError::Config(format!(
            "the checkpoint was not trained on {CONTEXT}/{GAP}/{CONTEXT} interpolation windows (set train.window = \"interpolation\")"
        )));
    }
    let data = io::read_dataset(data_path)?;
    fully_observed(&data)?;
    let tasks: Vec<InterpolationTask> = tiled_tasks(&data, c.usize("interp.tasks")?)?;
    io::write_tasks(&out.join("tasks.csv"), &tasks)?;
    let model = ck.to_model()?;
    let mut rng = RngStream::named(c.seed()?, "sampling");
    let report = run_interp_benchmark(&model, &tasks, c.usize("interp.num_samples")?, &mut rng)?;
    let rows: Vec<Vec<String>> = report
        .scores
        .iter()
        .enumerate()
        .map(|(k, s)| vec![k.to_string(), f(s.model), f(s.dummy)])
        .collect();
    io::write_table(
        &out.join("interp_scores.csv"),
        &["task", "model_energy", "dummy_energy"],
        &rows,
    )?;
    let summary = [
        ("model_energy_mean", report.model_mean()),
        ("dummy_energy_mean", report.dummy_mean()),
        ("boundary_jump", report.boundary_jump),
        ("shuffled_boundary_jump", report.shuffled_jump),
    ];
    let rows: Vec<Vec<String>> = summary.iter().map(|(k, v)| vec![k.to_string(), f(*v)]).collect();
    io::write_table(&out.join("interp_summary.csv"), &["metric", "value"], &rows)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let common = cli.common;
    match cli.command {
        Command::Generate {
            process,
            length,
            num_series,
        } => {
            let c = settings(
                &common,
                &[
                    ("generate.process", quoted(&process)),
                    ("generate.length", length.map(|x| x.to_string())),
                    ("generate.num_series", num_series.map(|x| x.to_string())),
                ],
            )?;
            generate(&c, out_dir(&common)?)
        }
        Command::Train {
            data,
            prediction_length,
            epochs,
        } => {
            let c = settings(
                &common,
                &[
                    ("train.prediction_length", prediction_length.map(|x| x.to_string())),
                    ("train.max_epochs", epochs.map(|x| x.to_string())),
                ],
            )?;
            train_cmd(&c, &data, out_dir(&common)?)
        }
        Command::Sample {
            checkpoint,
            data,
            samples,
            origin,
        } => {
            let c = settings(
                &common,
                &[
                    ("sample.num_samples", samples.map(|x| x.to_string())),
                    ("sample.origin", origin.map(|x| x.to_string())),
                ],
            )?;
            sample_cmd(&c, &checkpoint, &data, out_dir(&common)?)
        }
        Command::Evaluate { samples, data } => {
            settings(&common, &[])?;
            evaluate_cmd(&samples, &data, out_dir(&common)?)
        }
        Command::Backtest { data } => {
            let c = settings(&common, &[])?;
            backtest_cmd(&c, &data, out_dir(&common)?)
        }
        Command::Diagnose { checkpoint, data } => {
            let c = settings(&common, &[])?;
            diagnose_cmd(&c, &checkpoint, &data, out_dir(&common)?)
        }
        Command::Interp { checkpoint, data } => {
            let c = settings(&common, &[])?;
            interp_cmd(&c, &checkpoint, &data, out_dir(&common)?)
        }
    }
}

/// Runs the command line and returns the process exit code.
pub fn main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                eprint!("{e}");
                return 2;
            }
            let first = e
                .to_string()
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ")
                .to_string();
            eprintln!("{}", CliError::Config(first).line());
            return 2;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}
