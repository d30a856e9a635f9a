//! Threshold signals, position bookkeeping with proportional transaction
//! costs, equity lines, error metrics, and annualised performance ratios.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BacktestError {
    #[error("series lengths differ: {what}")]
    MisalignedSeries { what: String },
    #[error("need at least one observation")]
    Empty,
    #[error("legs do not overlap in time")]
    NoOverlap,
    #[error("invalid strategy configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyMode {
    LongShort,
    LongOnly,
}

impl StrategyMode {
    pub fn label(self) -> &'static str {
        match self {
            StrategyMode::LongShort => "long_short",
            StrategyMode::LongOnly => "long_only",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub mode: StrategyMode,
    /// Proportional cost per unit of position change, e.g. `0.00005`.
    pub tc: f64,
    /// Annualisation factor for volatility (252 or 365).
    pub trading_days: f64,
}

/// `+1` above `c`, `-1` below `-c`, `0` on or inside the band.
pub fn signals(forecasts: &[f64], c: f64) -> Vec<i8> {
    forecasts
        .iter()
        .map(|&f| {
            if f > c {
                1
            } else if f < -c {
                -1
            } else {
                0
            }
        })
        .collect()
}

/// Position held over each day given that day's signal. A zero signal keeps
/// the previous position; long-only ignores sells unless a long is open and
/// never goes short.
pub fn positions(signals: &[i8], mode: StrategyMode) -> Vec<i8> {
    let mut held = 0i8;
    signals
        .iter()
        .map(|&s| {
            held = match (mode, s) {
                (_, 0) => held,
                (StrategyMode::LongShort, s) => s,
                (StrategyMode::LongOnly, 1) => 1,
                (StrategyMode::LongOnly, _) => 0,
            };
            held
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Trade {
    pub date: NaiveDate,
    pub from: i8,
    pub to: i8,
    /// Cost in equity units, charged on the equity before the day's return.
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Metrics {
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
    pub arc: f64,
    pub asd: f64,
    pub md: f64,
    pub ir: f64,
    pub ir_star: f64,
    pub sr: f64,
    /// Set when the drawdown-adjusted ratio was undefined and reported as 0.
    pub ir_star_degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestResult {
    /// Anchor date (value 1.0) followed by one date per trading day.
    pub dates: Vec<NaiveDate>,
    pub equity: Vec<f64>,
    /// Net strategy return for each trading day (`dates[1..]`).
    pub daily_returns: Vec<f64>,
    /// Position held on each trading day; empty for combined portfolios.
    pub positions: Vec<i8>,
    pub trades: Vec<Trade>,
    pub metrics: Metrics,
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64, BacktestError> {
    check_pair(pred, actual)?;
    let s: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum();
    Ok((s / pred.len() as f64).sqrt())
}

pub fn mae(pred: &[f64], actual: &[f64]) -> Result<f64, BacktestError> {
    check_pair(pred, actual)?;
    let s: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum();
    Ok(s / pred.len() as f64)
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<(), BacktestError> {
    if a.len() != b.len() {
        return Err(BacktestError::MisalignedSeries {
            what: format!("{} predictions vs {} actuals", a.len(), b.len()),
        });
    }
    if a.is_empty() {
        return Err(BacktestError::Empty);
    }
    Ok(())
}

/// Annualised compound return over calendar time, with 365.25-day years.
pub fn arc(dates: &[NaiveDate], equity: &[f64]) -> f64 {
    let (Some(first), Some(last)) = (dates.first(), dates.last()) else {
        return 0.0;
    };
    let days = (*last - *first).num_days() as f64;
    if days <= 0.0 || equity.len() < 2 {
        return 0.0;
    }
    let ratio = equity[equity.len() - 1] / equity[0];
    if ratio <= 0.0 {
        return -1.0;
    }
    ratio.powf(365.25 / days) - 1.0
}

fn sample_std(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = x.iter().sum::<f64>() / x.len() as f64;
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// `sqrt(T)` times the sample standard deviation of daily returns.
pub fn asd(daily_returns: &[f64], trading_days: f64) -> f64 {
    trading_days.sqrt() * sample_std(daily_returns)
}

/// Annualised sample standard deviation of the negative daily returns.
pub fn downside_asd(daily_returns: &[f64], trading_days: f64) -> f64 {
    let neg: Vec<f64> = daily_returns.iter().copied().filter(|r| *r < 0.0).collect();
    asd(&neg, trading_days)
}

/// Largest relative fall from a running peak, in `[0, 1]`.
pub fn max_drawdown(equity: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut md: f64 = 0.0;
    for &v in equity {
        peak = peak.max(v);
        if peak > 0.0 {
            md = md.max((peak - v) / peak);
        }
    }
    md.min(1.0)
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

pub fn ir(arc: f64, asd: f64) -> f64 {
    ratio(arc, asd)
}

/// `ARC^2 sign(ARC) / (ASD MD)`; `(0, true)` when the denominator vanishes.
pub fn ir_star(arc: f64, asd: f64, md: f64) -> (f64, bool) {
    let den = asd * md;
    if den > 0.0 {
        (arc * arc * arc.signum() / den, false)
    } else {
        (0.0, true)
    }
}

pub fn sortino(arc: f64, downside_asd: f64) -> f64 {
    ratio(arc, downside_asd)
}

/// Trading ratios of a dated equity line and its daily returns.
pub fn performance(
    dates: &[NaiveDate],
    equity: &[f64],
    daily_returns: &[f64],
    trading_days: f64,
) -> Metrics {
    let a = arc(dates, equity);
    let s = asd(daily_returns, trading_days);
    let md = max_drawdown(equity);
    let (irs, degenerate) = ir_star(a, s, md);
    Metrics {
        rmse: None,
        mae: None,
        arc: a,
        asd: s,
        md,
        ir: ir(a, s),
        ir_star: irs,
        sr: sortino(a, downside_asd(daily_returns, trading_days)),
        ir_star_degenerate: degenerate,
    }
}

/// Runs the strategy over `dates` (one per trading day, each carrying that
/// day's simple asset return and the signal decided the evening before).
/// Equity starts at 1.0 on `anchor`, the last date before the first trade.
pub fn run_strategy(
    anchor: NaiveDate,
    dates: &[NaiveDate],
    asset_returns: &[f64],
    sig: &[i8],
    cfg: &StrategyConfig,
) -> Result<BacktestResult, BacktestError> {
    if dates.len() != asset_returns.len() || dates.len() != sig.len() {
        return Err(BacktestError::MisalignedSeries {
            what: format!(
                "{} dates, {} returns, {} signals",
                dates.len(),
                asset_returns.len(),
                sig.len()
            ),
        });
    }
    if dates.is_empty() {
        return Err(BacktestError::Empty);
    }
    if !(cfg.tc >= 0.0) || !(cfg.trading_days > 0.0) {
        return Err(BacktestError::InvalidConfig(format!(
            "tc {} trading days {}",
            cfg.tc, cfg.trading_days
        )));
    }
    let pos = positions(sig, cfg.mode);
    let mut equity = Vec::with_capacity(dates.len() + 1);
    let mut daily = Vec::with_capacity(dates.len());
    let mut trades = Vec::new();
    let mut value = 1.0;
    let mut prev = 0i8;
    equity.push(value);
    for ((&d, &r), &p) in dates.iter().zip(asset_returns).zip(&pos) {
        let change = (p - prev).abs() as f64;
        if p != prev {
            trades.push(Trade {
                date: d,
                from: prev,
                to: p,
                cost: cfg.tc * change * value,
            });
        }
        let net = p as f64 * r - cfg.tc * change;
        value *= 1.0 + net;
        daily.push(net);
        equity.push(value);
        prev = p;
    }
    let mut all_dates = Vec::with_capacity(dates.len() + 1);
    all_dates.push(anchor);
    all_dates.extend_from_slice(dates);
    let metrics = performance(&all_dates, &equity, &daily, cfg.trading_days);
    Ok(BacktestResult {
        dates: all_dates,
        equity,
        daily_returns: daily,
        positions: pos,
        trades,
        metrics,
    })
}

/// Always long, no costs.
pub fn buy_and_hold(
    anchor: NaiveDate,
    dates: &[NaiveDate],
    asset_returns: &[f64],
    trading_days: f64,
) -> Result<BacktestResult, BacktestError> {
    run_strategy(
        anchor,
        dates,
        asset_returns,
        &vec![1; dates.len()],
        &StrategyConfig {
            mode: StrategyMode::LongShort,
            tc: 0.0,
            trading_days,
        },
    )
}

fn value_as_of(r: &BacktestResult, d: NaiveDate) -> Option<f64> {
    match r.dates.binary_search(&d) {
        Ok(i) => Some(r.equity[i]),
        Err(0) => None,
        Err(i) => Some(r.equity[i - 1]),
    }
}

/// Equally weighted, daily rebalanced combination of two equity lines over
/// their common time span. Every date of either leg inside the span is a
/// portfolio date; a leg with no observation on a date contributes a zero
/// return (its last value carries forward).
pub fn portfolio(
    a: &BacktestResult,
    b: &BacktestResult,
    trading_days: f64,
) -> Result<BacktestResult, BacktestError> {
    let (Some(&a0), Some(&b0), Some(&a1), Some(&b1)) = (
        a.dates.first(),
        b.dates.first(),
        a.dates.last(),
        b.dates.last(),
    ) else {
        return Err(BacktestError::Empty);
    };
    let (start, end) = (a0.max(b0), a1.min(b1));
    if start >= end {
        return Err(BacktestError::NoOverlap);
    }
    let mut dates: Vec<NaiveDate> = a
        .dates
        .iter()
        .chain(&b.dates)
        .copied()
        .filter(|d| *d >= start && *d <= end)
        .collect();
    dates.push(start);
    dates.sort();
    dates.dedup();

    let mut equity = Vec::with_capacity(dates.len());
    let mut daily = Vec::with_capacity(dates.len() - 1);
    let mut value = 1.0;
    equity.push(value);
    let mut prev = (
        value_as_of(a, start).unwrap_or(1.0),
        value_as_of(b, start).unwrap_or(1.0),
    );
    for &d in &dates[1..] {
        let cur = (
            value_as_of(a, d).unwrap_or(prev.0),
            value_as_of(b, d).unwrap_or(prev.1),
        );
        let r = 0.5 * (cur.0 / prev.0 - 1.0) + 0.5 * (cur.1 / prev.1 - 1.0);
        value *= 1.0 + r;
        daily.push(r);
        equity.push(value);
        prev = cur;
    }
    let metrics = performance(&dates, &equity, &daily, trading_days);
    Ok(BacktestResult {
        dates,
        equity,
        daily_returns: daily,
        positions: Vec::new(),
        trades: Vec::new(),
        metrics,
    })
}
