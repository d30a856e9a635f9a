//! Hybrid econometric / machine-learning forecasting of daily log returns.
//!
//! The crate covers the whole experimental pipeline: return construction and
//! descriptive statistics, ARIMA/ARFIMA estimation, from-scratch SVR,
//! gradient-boosted trees and LSTM learners, the two linear/nonlinear
//! hybridisation schemes, walk-forward validation with nested folds, and a
//! transaction-cost-aware backtest with the usual performance indicators.

pub mod backtest;
pub mod econometric;
pub mod hybrid;
pub mod learners;
pub mod pipeline;
pub mod simulate;
pub mod timeseries;
pub mod validation;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use econometric::{
    fit_arfima, fit_arima, ArfimaOptions, ArimaOrder, EconError, FittedLinearModel, LinearKind,
    OrderBounds,
};
pub use timeseries::{
    describe, ingest_csv, log_returns, CsvSpec, DescriptiveStats, PriceSeries, ReturnSeries,
    SeriesError,
};
