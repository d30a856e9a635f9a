//! Configuration-driven experiment runner: walk-forward forecasts for every
//! configured method and asset, both trading strategies, portfolio tables,
//! equity plots and a manifest describing the run.

pub mod config;
pub mod report;
pub mod runner;
pub mod svg;

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use hybridcast::timeseries::{describe, ingest_csv, log_returns, CsvSpec, DescriptiveStats};
use thiserror::Error;

pub use config::ExperimentConfig;
pub use report::{emit_reports, RunManifest};
pub use runner::{run_experiment, ExperimentRun};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{origin}: {message}")]
    Config { origin: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Series(#[from] hybridcast::SeriesError),
    #[error(transparent)]
    Validation(#[from] hybridcast::validation::ValidationError),
    #[error("asset {asset}: {source}")]
    Asset {
        asset: String,
        #[source]
        source: Box<CliError>,
    },
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

pub struct RunSummary {
    pub manifest: RunManifest,
    pub out_dir: PathBuf,
}

impl RunSummary {
    pub fn failures(&self) -> usize {
        self.manifest.failures
    }
}

/// Loads the config, runs the experiment and writes every report.
pub fn run(config_path: &Path, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    if let Some(out) = &opts.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    run_config(&cfg, opts.jobs)
}

pub fn run_config(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<RunSummary, CliError> {
    runner::check_inputs(cfg)?;
    let run = run_experiment(cfg, jobs)?;
    let manifest = emit_reports(cfg, &run, &cfg.output_dir)?;
    Ok(RunSummary {
        manifest,
        out_dir: cfg.output_dir.clone(),
    })
}

/// Statistics of the daily log returns dated inside the optional bounds.
pub fn describe_file(
    path: &Path,
    spec: &CsvSpec,
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
) -> Result<DescriptiveStats, CliError> {
    let prices = ingest_csv(path, spec)?;
    let r = log_returns(&prices)?;
    let values: Vec<f64> = r
        .dates()
        .iter()
        .zip(r.values())
        .filter(|(d, _)| from.is_none_or(|f| **d >= f) && to.is_none_or(|t| **d <= t))
        .map(|(_, v)| *v)
        .collect();
    Ok(describe(&values)?)
}

/// Table of the statistics with returns in percent.
pub fn format_stats(s: &DescriptiveStats) -> String {
    let pct = |x: f64| format!("{:.2}%", 100.0 * x);
    let rows = [
        ("count", s.count.to_string()),
        ("min", pct(s.min)),
        ("q1", pct(s.q1)),
        ("median", pct(s.median)),
        ("mean", pct(s.mean)),
        ("q3", pct(s.q3)),
        ("max", pct(s.max)),
        ("std", pct(s.std)),
        ("skewness", format!("{:.2}", s.skewness)),
        ("kurtosis", format!("{:.2}", s.kurtosis)),
    ];
    rows.iter()
        .map(|(k, v)| format!("{k:<9} {v:>10}\n"))
        .collect()
}
