//! Runs every configured method on every asset and collects the results.

use std::path::Path;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use hybridcast::backtest::{BacktestResult, StrategyConfig};
use hybridcast::hybrid::Method;
use hybridcast::pipeline::{
    benchmark, evaluate_forecasts, forecast_method, out_of_sample, LinearCache,
};
use hybridcast::timeseries::{ingest_csv, log_returns, PriceSeries, ReturnSeries};
use hybridcast::validation::{make_windows, Stage, WalkForward};
use hybridcast::LinearKind;
use rayon::prelude::*;

use crate::config::{AssetConfig, ExperimentConfig, StrategyName};
use crate::CliError;

pub struct AssetData {
    pub log: ReturnSeries,
    pub simple: ReturnSeries,
}

/// Log and simple returns dated inside `[start, end]`.
pub fn load_returns(
    prices: &PriceSeries,
    start: NaiveDate,
    end: NaiveDate,
) -> Result<AssetData, CliError> {
    let clip = |s: ReturnSeries| -> Result<ReturnSeries, CliError> {
        let lo = s.index_at_or_after(start);
        let hi = s.index_at_or_after(end + chrono::Days::new(1));
        Ok(ReturnSeries::new(
            s.dates()[lo..hi].to_vec(),
            s.values()[lo..hi].to_vec(),
        )?)
    };
    Ok(AssetData {
        log: clip(log_returns(prices)?)?,
        simple: clip(prices.simple_returns()?)?,
    })
}

pub struct MethodRun {
    pub method: Method,
    pub elapsed: Duration,
    pub outcome: Result<MethodResults, String>,
}

pub struct MethodResults {
    /// Absent for Buy&Hold.
    pub walk: Option<WalkForward>,
    /// One backtest per configured strategy, in configured order.
    pub strategies: Vec<BacktestResult>,
}

pub struct AssetRun {
    pub config: AssetConfig,
    pub window_count: usize,
    pub oos_days: usize,
    pub methods: Vec<MethodRun>,
    pub elapsed: Duration,
}

impl AssetRun {
    pub fn failures(&self) -> impl Iterator<Item = (&Method, &str)> {
        self.methods
            .iter()
            .filter_map(|m| m.outcome.as_ref().err().map(|e| (&m.method, e.as_str())))
    }
}

fn strategy_configs(cfg: &ExperimentConfig, asset: &AssetConfig) -> Vec<StrategyConfig> {
    cfg.strategies
        .iter()
        .map(|s: &StrategyName| StrategyConfig {
            mode: s.mode(),
            tc: asset.tc,
            trading_days: asset.trading_days,
        })
        .collect()
}

pub fn run_asset(
    cfg: &ExperimentConfig,
    asset: &AssetConfig,
    methods: &[Method],
) -> Result<AssetRun, CliError> {
    let clock = Instant::now();
    let plan = asset.window_plan().map_err(|message| CliError::Config {
        origin: asset.name.clone(),
        message,
    })?;
    let prices = ingest_csv(&asset.data, &asset.csv_spec())?;
    let data = load_returns(&prices, plan.start, plan.end)?;
    let splits = make_windows(&plan, Some(&data.log))?;
    let (_, oos) = out_of_sample(&data.log, &splits).ok_or_else(|| CliError::Config {
        origin: asset.name.clone(),
        message: "no observations inside the test ranges".into(),
    })?;
    let strategies = strategy_configs(cfg, asset);

    let cache = LinearCache::new();
    for kind in [LinearKind::Arima, LinearKind::Arfima] {
        let users: Vec<&Method> = methods
            .iter()
            .filter(|m| m.linear_kind() == Some(kind))
            .collect();
        if users.is_empty() {
            continue;
        }
        let stages: &[Stage] = if users.iter().any(|m| matches!(m, Method::Hybrid { .. })) {
            &[Stage::Selection, Stage::Final]
        } else {
            &[Stage::Final]
        };
        cache.prefill(kind, stages, &data.log, &splits, &cfg.models);
    }

    let runs = methods
        .par_iter()
        .map(|method| {
            let start = Instant::now();
            let outcome = run_method(
                cfg,
                asset,
                method,
                &data,
                &splits,
                &oos,
                &strategies,
                &cache,
            );
            MethodRun {
                method: *method,
                elapsed: start.elapsed(),
                outcome,
            }
        })
        .collect();
    Ok(AssetRun {
        config: asset.clone(),
        window_count: splits.len(),
        oos_days: oos.len(),
        methods: runs,
        elapsed: clock.elapsed(),
    })
}

#[allow(clippy::too_many_arguments)]
fn run_method(
    cfg: &ExperimentConfig,
    asset: &AssetConfig,
    method: &Method,
    data: &AssetData,
    splits: &[hybridcast::validation::FoldSplit],
    oos: &[NaiveDate],
    strategies: &[StrategyConfig],
    cache: &LinearCache,
) -> Result<MethodResults, String> {
    if *method == Method::BuyAndHold {
        let bh = benchmark(&data.simple, oos, asset.trading_days).map_err(|e| e.to_string())?;
        return Ok(MethodResults {
            walk: None,
            strategies: vec![bh; strategies.len()],
        });
    }
    let walk = forecast_method(
        &asset.name,
        method,
        &data.log,
        splits,
        &cfg.models,
        cache,
        cfg.seed,
    )
    .map_err(|e| e.to_string())?;
    let forecasts: Vec<_> = walk.forecasts().cloned().collect();
    if forecasts.iter().any(|f| !f.forecast.is_finite()) {
        return Err("non-finite forecast".into());
    }
    let results = strategies
        .iter()
        .map(|s| evaluate_forecasts(&data.simple, &forecasts, s).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MethodResults {
        walk: Some(walk),
        strategies: results,
    })
}

pub struct ExperimentRun {
    pub assets: Vec<AssetRun>,
    pub elapsed: Duration,
}

impl ExperimentRun {
    pub fn failure_count(&self) -> usize {
        self.assets.iter().map(|a| a.failures().count()).sum()
    }
}

/// Runs all assets. `jobs` bounds the worker pool; `None` uses every core.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    jobs: Option<usize>,
) -> Result<ExperimentRun, CliError> {
    let methods = cfg.parsed_methods().map_err(|message| CliError::Config {
        origin: "methods".into(),
        message,
    })?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| CliError::Config {
        origin: "jobs".into(),
        message: e.to_string(),
    })?;
    let clock = Instant::now();
    let assets = pool.install(|| {
        cfg.assets
            .iter()
            .map(|a| run_asset(cfg, a, &methods))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(ExperimentRun {
        assets,
        elapsed: clock.elapsed(),
    })
}

/// Loads prices and reports whether the file exists, for friendlier errors.
pub fn check_inputs(cfg: &ExperimentConfig) -> Result<(), CliError> {
    for a in &cfg.assets {
        if !Path::new(&a.data).is_file() {
            return Err(CliError::Io {
                path: a.data.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "price file not found"),
            });
        }
    }
    Ok(())
}
