//! End-to-end glue: per-method candidate grids, shared linear fits, seeded
//! walk-forward forecasting and the backtests built on the forecasts.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::{self, BacktestError, BacktestResult, StrategyConfig};
use crate::econometric::{
    fit_arfima, fit_arima, ArfimaOptions, FittedLinearModel, LinearKind, OrderBounds,
};
use crate::hybrid::{
    Forecaster, HybridError, HybridModel, LearnerKind, LearnerModel, LinearForecaster, Method,
};
use crate::learners::{GbtParams, Kernel, LearnerSpec, LstmParams, SvrParams};
use crate::timeseries::ReturnSeries;
use crate::validation::{
    run_walk_forward, DatedForecast, FitContext, FoldSplit, Stage, ValidationError, WalkForward,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0} has no model to fit")]
    NothingToFit(String),
    #[error("empty candidate grid for {0}")]
    EmptyGrid(String),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Backtest(#[from] BacktestError),
    #[error("no return observed on forecast date {0}")]
    MissingReturn(NaiveDate),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelChoice {
    Linear,
    /// Gaussian kernel with gamma = 1 / number of features.
    Rbf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvrGrid {
    pub c: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub kernel: Vec<KernelChoice>,
}

impl Default for SvrGrid {
    fn default() -> Self {
        Self {
            c: vec![0.1, 1.0, 10.0],
            epsilon: vec![1e-4, 1e-3],
            kernel: vec![KernelChoice::Linear, KernelChoice::Rbf],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtGrid {
    pub n_trees: Vec<usize>,
    pub max_depth: Vec<usize>,
    pub learning_rate: Vec<f64>,
}

impl Default for GbtGrid {
    fn default() -> Self {
        Self {
            n_trees: vec![100, 300],
            max_depth: vec![2, 3],
            learning_rate: vec![0.05, 0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmGrid {
    pub hidden_size: Vec<usize>,
    pub sequence_length: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for LstmGrid {
    fn default() -> Self {
        Self {
            hidden_size: vec![8, 16],
            sequence_length: vec![10, 22],
            epochs: 100,
            learning_rate: 0.01,
            batch_size: 32,
        }
    }
}

/// Everything that shapes model fitting, independent of the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub lags: Vec<usize>,
    pub svr: SvrGrid,
    pub gbt: GbtGrid,
    pub lstm: LstmGrid,
    pub orders: OrderBounds,
    pub arfima: ArfimaOptions,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            lags: vec![5, 10, 22],
            svr: SvrGrid::default(),
            gbt: GbtGrid::default(),
            lstm: LstmGrid::default(),
            orders: OrderBounds::default(),
            arfima: ArfimaOptions::default(),
        }
    }
}

/// One hyperparameter cell for a learner-based method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub lag_n: usize,
    pub learner: LearnerSpec,
}

impl ModelSettings {
    fn learner_specs(&self, kind: LearnerKind, n_features: usize) -> Vec<LearnerSpec> {
        let mut out = Vec::new();
        match kind {
            LearnerKind::Svr => {
                for &c in &self.svr.c {
                    for &epsilon in &self.svr.epsilon {
                        for k in &self.svr.kernel {
                            let kernel = match k {
                                KernelChoice::Linear => Kernel::Linear,
                                KernelChoice::Rbf => Kernel::Rbf {
                                    gamma: 1.0 / n_features as f64,
                                },
                            };
                            out.push(LearnerSpec::Svr(SvrParams {
                                kernel,
                                c,
                                epsilon,
                                ..Default::default()
                            }));
                        }
                    }
                }
            }
            LearnerKind::Gbt => {
                for &n_trees in &self.gbt.n_trees {
                    for &max_depth in &self.gbt.max_depth {
                        for &learning_rate in &self.gbt.learning_rate {
                            out.push(LearnerSpec::Gbt(GbtParams {
                                n_trees,
                                max_depth,
                                learning_rate,
                                ..Default::default()
                            }));
                        }
                    }
                }
            }
            LearnerKind::Lstm => {
                for &hidden_size in &self.lstm.hidden_size {
                    for &sequence_length in &self.lstm.sequence_length {
                        out.push(LearnerSpec::Lstm(LstmParams {
                            hidden_size,
                            sequence_length,
                            epochs: self.lstm.epochs,
                            learning_rate: self.lstm.learning_rate,
                            batch_size: self.lstm.batch_size,
                            ..Default::default()
                        }));
                    }
                }
            }
        }
        out
    }

    /// Grid for a learner or hybrid method, lag count outermost. Linear
    /// methods and Buy&Hold have no grid.
    pub fn candidates(&self, method: &Method) -> Vec<Candidate> {
        let (kind, extra) = match method {
            Method::Learner(k) => (*k, 0),
            Method::Hybrid { learner, mode, .. } => {
                (*learner, usize::from(*mode == crate::hybrid::Mode::Feature))
            }
            _ => return Vec::new(),
        };
        self.lags
            .iter()
            .flat_map(|&lag_n| {
                self.learner_specs(kind, lag_n + extra)
                    .into_iter()
                    .map(move |learner| Candidate { lag_n, learner })
            })
            .collect()
    }
}

/// 64-bit FNV-1a over the given parts, used to derive reproducible seeds.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    eat(&base.to_le_bytes());
    for p in parts {
        eat(p.as_bytes());
        eat(&[0xff]);
    }
    h
}

type LinearSlot = Arc<Result<FittedLinearModel, String>>;

/// Linear fits keyed by (kind, window, stage). Every method on one asset
/// sees the same training slice for a given key, so the estimate is shared.
///
/// A miss fits outside the lock; concurrent misses on one key may both fit,
/// and the first stored result is kept. Fits are deterministic, so which
/// one wins does not matter.
#[derive(Default)]
pub struct LinearCache {
    slots: Mutex<HashMap<(LinearKind, usize, Stage), LinearSlot>>,
}

impl LinearCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn lookup(&self, key: (LinearKind, usize, Stage)) -> Option<LinearSlot> {
        self.slots
            .lock()
            .expect("linear cache poisoned")
            .get(&key)
            .cloned()
    }

    pub fn get_or_fit(
        &self,
        kind: LinearKind,
        ctx: FitContext,
        train: &[f64],
        settings: &ModelSettings,
    ) -> Result<FittedLinearModel, HybridError> {
        let key = (kind, ctx.window, ctx.stage);
        let slot = match self.lookup(key) {
            Some(slot) => slot,
            None => {
                let fitted = match kind {
                    LinearKind::Arima => fit_arima(train, &settings.orders),
                    LinearKind::Arfima => fit_arfima(train, &settings.orders, &settings.arfima),
                }
                .map_err(|e| e.to_string());
                self.slots
                    .lock()
                    .expect("linear cache poisoned")
                    .entry(key)
                    .or_insert_with(|| Arc::new(fitted))
                    .clone()
            }
        };
        match slot.as_ref() {
            Ok(m) => Ok(m.clone()),
            Err(e) => Err(HybridError::CachedLinear(e.clone())),
        }
    }

    /// Fits every window's linear model for the given stages up front, in
    /// parallel.
    pub fn prefill(
        &self,
        kind: LinearKind,
        stages: &[Stage],
        series: &ReturnSeries,
        splits: &[FoldSplit],
        settings: &ModelSettings,
    ) {
        let jobs: Vec<(usize, Stage, std::ops::Range<usize>)> = splits
            .iter()
            .flat_map(|s| {
                let start = s.train.indices(series).start;
                stages.iter().map(move |&stage| {
                    let end = match stage {
                        Stage::Selection => s.train.indices(series).end,
                        Stage::Final => s.val[2].indices(series).end,
                    };
                    (s.index, stage, start..end)
                })
            })
            .collect();
        jobs.par_iter().for_each(|(window, stage, range)| {
            let ctx = FitContext {
                window: *window,
                stage: *stage,
                candidate: 0,
            };
            // failures are stored and resurface in the methods that need them
            let _ = self.get_or_fit(kind, ctx, &series.values()[range.clone()], settings);
        });
    }

    pub fn len(&self) -> usize {
        self.slots.lock().expect("linear cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn stage_label(stage: Stage) -> &'static str {
    match stage {
        Stage::Selection => "selection",
        Stage::Final => "final",
    }
}

/// Walk-forward forecasts of one method over all windows.
pub fn forecast_method(
    asset: &str,
    method: &Method,
    series: &ReturnSeries,
    splits: &[FoldSplit],
    settings: &ModelSettings,
    cache: &LinearCache,
    seed: u64,
) -> Result<WalkForward, PipelineError> {
    let label = method.label();
    let seed_for = |ctx: FitContext| {
        derive_seed(
            seed,
            &[
                asset,
                &label,
                &ctx.window.to_string(),
                stage_label(ctx.stage),
                &ctx.candidate.to_string(),
            ],
        )
    };
    let walk = match *method {
        Method::BuyAndHold => return Err(PipelineError::NothingToFit(label)),
        Method::Linear(kind) => run_walk_forward(series, splits, &[()], |_, train, ctx| {
            let m = cache.get_or_fit(kind, ctx, train, settings)?;
            Ok(Box::new(LinearForecaster(m)) as Box<dyn Forecaster>)
        })?,
        Method::Learner(_) => {
            let grid = settings.candidates(method);
            if grid.is_empty() {
                return Err(PipelineError::EmptyGrid(label));
            }
            run_walk_forward(series, splits, &grid, |c, train, ctx| {
                let m = LearnerModel::fit(&c.learner, c.lag_n, train, seed_for(ctx))?;
                Ok(Box::new(m) as Box<dyn Forecaster>)
            })?
        }
        Method::Hybrid { linear, mode, .. } => {
            let grid = settings.candidates(method);
            if grid.is_empty() {
                return Err(PipelineError::EmptyGrid(label));
            }
            run_walk_forward(series, splits, &grid, |c, train, ctx| {
                let lin = cache.get_or_fit(linear, ctx, train, settings)?;
                let m = HybridModel::fit(lin, &c.learner, mode, c.lag_n, train, seed_for(ctx))?;
                Ok(Box::new(m) as Box<dyn Forecaster>)
            })?
        }
    };
    Ok(walk)
}

/// Out-of-sample trading days: every observation inside some test range,
/// with the date of the observation just before the first one.
pub fn out_of_sample(
    series: &ReturnSeries,
    splits: &[FoldSplit],
) -> Option<(NaiveDate, Vec<NaiveDate>)> {
    let dates: Vec<NaiveDate> = series
        .dates()
        .iter()
        .copied()
        .filter(|d| splits.iter().any(|s| s.test.contains(*d)))
        .collect();
    let first_date = *dates.first()?;
    let first = series.dates().iter().position(|d| *d == first_date)?;
    let anchor = if first == 0 {
        dates[0].pred_opt()?
    } else {
        series.dates()[first - 1]
    };
    Some((anchor, dates))
}

/// Simple returns of the asset on the given dates, plus the date of the
/// observation preceding the first of them.
fn aligned_returns(
    simple: &ReturnSeries,
    dates: &[NaiveDate],
) -> Result<(NaiveDate, Vec<f64>), PipelineError> {
    let first = *dates.first().ok_or(BacktestError::Empty)?;
    let pos = simple
        .dates()
        .binary_search(&first)
        .map_err(|_| PipelineError::MissingReturn(first))?;
    let anchor = if pos == 0 {
        first.pred_opt().unwrap_or(first)
    } else {
        simple.dates()[pos - 1]
    };
    let mut out = Vec::with_capacity(dates.len());
    for d in dates {
        let i = simple
            .dates()
            .binary_search(d)
            .map_err(|_| PipelineError::MissingReturn(*d))?;
        out.push(simple.values()[i]);
    }
    Ok((anchor, out))
}

/// Trades the forecasts with threshold c = tc and attaches the forecast
/// error metrics.
pub fn evaluate_forecasts(
    simple: &ReturnSeries,
    forecasts: &[DatedForecast],
    cfg: &StrategyConfig,
) -> Result<BacktestResult, PipelineError> {
    let dates: Vec<NaiveDate> = forecasts.iter().map(|f| f.date).collect();
    let (anchor, returns) = aligned_returns(simple, &dates)?;
    let pred: Vec<f64> = forecasts.iter().map(|f| f.forecast).collect();
    let actual: Vec<f64> = forecasts.iter().map(|f| f.actual).collect();
    let sig = backtest::signals(&pred, cfg.tc);
    let mut result = backtest::run_strategy(anchor, &dates, &returns, &sig, cfg)?;
    result.metrics.rmse = Some(backtest::rmse(&pred, &actual)?);
    result.metrics.mae = Some(backtest::mae(&pred, &actual)?);
    Ok(result)
}

/// Cost-free, always-long benchmark over the given dates.
pub fn benchmark(
    simple: &ReturnSeries,
    dates: &[NaiveDate],
    trading_days: f64,
) -> Result<BacktestResult, PipelineError> {
    let (anchor, returns) = aligned_returns(simple, dates)?;
    Ok(backtest::buy_and_hold(
        anchor,
        dates,
        &returns,
        trading_days,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::Mode;
    use crate::validation::{make_windows, WindowPlan};

    #[test]
    fn default_grid_sizes() {
        let s = ModelSettings::default();
        let svr = Method::Learner(LearnerKind::Svr);
        assert_eq!(s.candidates(&svr).len(), 3 * 12);
        assert_eq!(
            s.candidates(&Method::Learner(LearnerKind::Gbt)).len(),
            3 * 8
        );
        assert_eq!(
            s.candidates(&Method::Learner(LearnerKind::Lstm)).len(),
            3 * 4
        );
        assert!(s.candidates(&Method::Linear(LinearKind::Arima)).is_empty());
        assert!(s.candidates(&Method::BuyAndHold).is_empty());
    }

    #[test]
    fn rbf_gamma_counts_the_forecast_column() {
        let s = ModelSettings {
            lags: vec![4],
            ..Default::default()
        };
        let gamma = |m: &Method| {
            s.candidates(m)
                .iter()
                .find_map(|c| match &c.learner {
                    LearnerSpec::Svr(p) => match p.kernel {
                        Kernel::Rbf { gamma } => Some(gamma),
                        _ => None,
                    },
                    _ => None,
                })
                .unwrap()
        };
        let hybrid = |mode| Method::Hybrid {
            learner: LearnerKind::Svr,
            linear: LinearKind::Arima,
            mode,
        };
        assert_eq!(gamma(&Method::Learner(LearnerKind::Svr)), 0.25);
        assert_eq!(gamma(&hybrid(Mode::Residual)), 0.25);
        assert_eq!(gamma(&hybrid(Mode::Feature)), 0.2);
    }

    #[test]
    fn seeds_depend_on_every_part() {
        let a = derive_seed(1, &["x", "y"]);
        assert_eq!(a, derive_seed(1, &["x", "y"]));
        assert_ne!(a, derive_seed(2, &["x", "y"]));
        assert_ne!(a, derive_seed(1, &["xy"]));
        assert_ne!(a, derive_seed(1, &["y", "x"]));
    }

    #[test]
    fn linear_fit_is_cached_per_window_and_stage() {
        let values: Vec<f64> = (0..300).map(|t| (t as f64 * 0.7).sin() * 0.01).collect();
        let cache = LinearCache::new();
        let s = ModelSettings {
            orders: OrderBounds {
                p_max: 1,
                d_max: 0,
                q_max: 0,
            },
            ..Default::default()
        };
        let ctx = |window, stage| FitContext {
            window,
            stage,
            candidate: 0,
        };
        let a = cache
            .get_or_fit(LinearKind::Arima, ctx(0, Stage::Final), &values, &s)
            .unwrap();
        // the cached estimate wins even though the slice differs
        let b = cache
            .get_or_fit(LinearKind::Arima, ctx(0, Stage::Final), &values[..200], &s)
            .unwrap();
        assert_eq!(a, b);
        cache
            .get_or_fit(LinearKind::Arima, ctx(0, Stage::Selection), &values, &s)
            .unwrap();
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn arima_walk_forward_covers_every_test_day() {
        use chrono::Datelike;
        let start = NaiveDate::from_ymd_opt(2010, 1, 1).unwrap();
        let end = NaiveDate::from_ymd_opt(2013, 12, 31).unwrap();
        let dates: Vec<NaiveDate> = start
            .iter_days()
            .take_while(|d| *d <= end)
            .filter(|d| d.weekday().num_days_from_monday() < 5)
            .collect();
        let values: Vec<f64> = (0..dates.len())
            .map(|t| ((t * 7919) % 101) as f64 / 5000.0 - 0.01)
            .collect();
        let series = ReturnSeries::new(dates.clone(), values).unwrap();
        let plan = WindowPlan {
            start,
            end,
            train_months: 12,
            val_months: [2, 4, 6],
            test_months: 6,
            step_months: 6,
        };
        let splits = make_windows(&plan, Some(&series)).unwrap();
        let settings = ModelSettings {
            orders: OrderBounds {
                p_max: 1,
                d_max: 0,
                q_max: 1,
            },
            ..Default::default()
        };
        let cache = LinearCache::new();
        let walk = forecast_method(
            "toy",
            &Method::Linear(LinearKind::Arima),
            &series,
            &splits,
            &settings,
            &cache,
            7,
        )
        .unwrap();
        let (_, oos) = out_of_sample(&series, &splits).unwrap();
        let got: Vec<NaiveDate> = walk.forecasts().map(|f| f.date).collect();
        assert_eq!(got, oos);
        assert!(crate::validation::find_leak(&walk.audit().cloned().collect::<Vec<_>>()).is_none());
        assert_eq!(cache.len(), splits.len());

        let warm = LinearCache::new();
        warm.prefill(
            LinearKind::Arima,
            &[Stage::Final],
            &series,
            &splits,
            &settings,
        );
        assert_eq!(warm.len(), splits.len());
        let again = forecast_method(
            "toy",
            &Method::Linear(LinearKind::Arima),
            &series,
            &splits,
            &settings,
            &warm,
            7,
        )
        .unwrap();
        assert!(walk.forecasts().eq(again.forecasts()));
    }

    #[test]
    fn evaluation_attaches_error_metrics() {
        let d = |i| NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Days::new(i);
        let simple =
            ReturnSeries::new((0..5).map(d).collect(), vec![0.01, -0.02, 0.03, 0.0, 0.01]).unwrap();
        let forecasts: Vec<DatedForecast> = (1..5)
            .map(|i| DatedForecast {
                date: d(i),
                forecast: 0.001,
                actual: simple.values()[i as usize],
            })
            .collect();
        let cfg = StrategyConfig {
            mode: backtest::StrategyMode::LongShort,
            tc: 0.0,
            trading_days: 365.0,
        };
        let r = evaluate_forecasts(&simple, &forecasts, &cfg).unwrap();
        assert_eq!(r.dates[0], d(0));
        let bh = benchmark(&simple, &r.dates[1..], 365.0).unwrap();
        assert_eq!(r.equity, bh.equity);
        assert!(r.metrics.rmse.unwrap() >= r.metrics.mae.unwrap());
    }
}
