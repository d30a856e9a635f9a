//! ARIMA and ARFIMA estimation by conditional sum of squares with AIC order
//! selection, and one-step-ahead forecasting.
//!
//! Both model families share one representation: a differencing filter
//! `y_t = sum_k w_k x_{t-k} - c` (integer binomial weights for ARIMA,
//! truncated fractional weights for ARFIMA) followed by an ARMA(p, q) on `y`.

pub mod arma;
mod diff;
pub mod optim;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use diff::{difference, frac_diff_weights, frac_difference, FracWeights};

use arma::{css_residuals, fit_arma, next_value, ArmaFit};
use diff::apply_weights;

/// Fewest training observations accepted by the fitting routines.
pub const MIN_TRAIN_LEN: usize = 50;

/// Default truncation depth of the fractional differencing filter.
pub const DEFAULT_TRUNCATION: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EconError {
    #[error("series too short: need at least {needed} observations, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("no candidate converged (last tried {0})")]
    NonConvergent(ArimaOrder),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LinearKind {
    Arima,
    Arfima,
}

impl LinearKind {
    pub fn label(self) -> &'static str {
        match self {
            LinearKind::Arima => "ARIMA",
            LinearKind::Arfima => "ARFIMA",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArimaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

impl ArimaOrder {
    pub const fn new(p: usize, d: usize, q: usize) -> Self {
        Self { p, d, q }
    }
}

impl fmt::Display for ArimaOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.p, self.d, self.q)
    }
}

/// Inclusive upper bounds of the order search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrderBounds {
    pub p_max: usize,
    pub d_max: usize,
    pub q_max: usize,
}

impl Default for OrderBounds {
    fn default() -> Self {
        Self {
            p_max: 5,
            d_max: 1,
            q_max: 5,
        }
    }
}

impl OrderBounds {
    fn validate(&self) -> Result<(), EconError> {
        if self.d_max > 2 {
            return Err(EconError::InvalidConfig(format!(
                "d_max = {} exceeds 2",
                self.d_max
            )));
        }
        Ok(())
    }
}

/// Grid and refinement settings for the fractional order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArfimaOptions {
    pub d_grid: Vec<f64>,
    /// Golden-section refinement half-width around the best grid cell;
    /// zero disables refinement.
    pub refine_radius: f64,
    pub truncation: usize,
}

impl Default for ArfimaOptions {
    fn default() -> Self {
        Self {
            d_grid: (-9..=9).map(|i| i as f64 * 0.05).collect(),
            refine_radius: 0.05,
            truncation: DEFAULT_TRUNCATION,
        }
    }
}

/// Estimated ARIMA or ARFIMA model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FittedLinearModel {
    pub kind: LinearKind,
    pub order: ArimaOrder,
    /// Fractional order (ARFIMA only, otherwise 0).
    pub frac_d: f64,
    /// Differencing filter `w_0..w_K` applied to the raw series.
    pub filter: Vec<f64>,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    /// Mean of the series the ARMA part sees (after differencing for ARIMA,
    /// before fractional filtering for ARFIMA).
    pub mu: f64,
    pub sigma2: f64,
    pub aic: f64,
    /// In-sample one-step residuals; `residuals[i]` belongs to training
    /// observation `warmup + i`.
    pub residuals: Vec<f64>,
    pub warmup: usize,
    pub converged: bool,
}

/// Output of running a fitted model's filter over a history.
#[derive(Debug, Clone)]
pub struct FilterTrace {
    /// Residual aligned to each history index; `None` inside the warm-up.
    pub residuals: Vec<Option<f64>>,
    /// Conditional-mean forecast of the observation following the history.
    pub next: f64,
}

impl FittedLinearModel {
    /// Builds a model from known parameters, e.g. for simulation or tests.
    pub fn from_parameters(
        order: ArimaOrder,
        phi: Vec<f64>,
        theta: Vec<f64>,
        mu: f64,
        sigma2: f64,
    ) -> Self {
        let filter = frac_diff_weights(order.d as f64, order.d).w;
        let warmup = order.d + order.p.max(order.q);
        Self {
            kind: LinearKind::Arima,
            order,
            frac_d: 0.0,
            filter,
            phi,
            theta,
            mu,
            sigma2,
            aic: f64::NAN,
            residuals: Vec::new(),
            warmup,
            converged: true,
        }
    }

    fn filter_depth(&self) -> usize {
        self.filter.len() - 1
    }

    fn filter_offset(&self) -> f64 {
        match self.kind {
            LinearKind::Arima => self.mu,
            LinearKind::Arfima => self.mu * self.filter.iter().sum::<f64>(),
        }
    }

    /// History length needed before a forecast can be formed.
    pub fn min_history(&self) -> usize {
        self.filter_depth() + self.order.p.max(self.order.q).max(1)
    }

    /// Runs the differencing filter and ARMA recursion over `history` with
    /// zero pre-sample errors, exactly as during estimation.
    pub fn run_filter(&self, history: &[f64]) -> Result<FilterTrace, EconError> {
        let needed = self.min_history();
        if history.len() < needed {
            return Err(EconError::TooShort {
                needed,
                got: history.len(),
            });
        }
        let depth = self.filter_depth();
        let c = self.filter_offset();
        let y: Vec<f64> = apply_weights(history, &self.filter)?
            .into_iter()
            .map(|v| v - c)
            .collect();
        let arma_warmup = self.order.p.max(self.order.q);
        let (e, _) = css_residuals(&y, &self.phi, &self.theta, arma_warmup);
        let y_next = next_value(&y, &e, &self.phi, &self.theta);
        let n = history.len();
        let carried: f64 = self
            .filter
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, w)| w * history[n - k])
            .sum();
        let mut residuals = vec![None; n];
        for (t, slot) in residuals.iter_mut().enumerate().skip(depth + arma_warmup) {
            *slot = Some(e[t - depth]);
        }
        Ok(FilterTrace {
            residuals,
            next: c + y_next - carried,
        })
    }

    /// One-step-ahead conditional-mean forecast of the value after `history`.
    pub fn forecast_one(&self, history: &[f64]) -> Result<f64, EconError> {
        Ok(self.run_filter(history)?.next)
    }

    /// In-sample fitted values `x_t - e_t` aligned to the training indices
    /// `warmup..`.
    pub fn fitted_values(&self, train: &[f64]) -> Vec<f64> {
        train[self.warmup..]
            .iter()
            .zip(&self.residuals)
            .map(|(x, e)| x - e)
            .collect()
    }

    pub fn describe(&self) -> String {
        match self.kind {
            LinearKind::Arima => format!("ARIMA{}", self.order),
            LinearKind::Arfima => format!(
                "ARFIMA({},{:.3},{})",
                self.order.p, self.frac_d, self.order.q
            ),
        }
    }
}

fn check_length(x: &[f64]) -> Result<(), EconError> {
    if x.len() < MIN_TRAIN_LEN {
        return Err(EconError::TooShort {
            needed: MIN_TRAIN_LEN,
            got: x.len(),
        });
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

struct Prepared {
    kind: LinearKind,
    d: usize,
    frac_d: f64,
    filter: Vec<f64>,
    mu: f64,
    y: Vec<f64>,
    scale: f64,
}

impl Prepared {
    /// A filtered series with no variation relative to the input scale
    /// admits no innovation variance estimate.
    fn is_degenerate(&self) -> bool {
        let spread = self.y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        spread <= 1e-10 * self.scale.max(f64::MIN_POSITIVE)
    }
}

fn abs_max(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn padded(mut w: Vec<f64>, depth: usize) -> Vec<f64> {
    w.resize(depth + 1, 0.0);
    w
}

/// `depth` fixes where the estimation sample starts, so that candidates with
/// different differencing orders are scored on the same observations.
fn prepare_arima(x: &[f64], d: usize, depth: usize) -> Result<Prepared, EconError> {
    let filter = padded(frac_diff_weights(d as f64, d).w, depth.max(d));
    let dx = apply_weights(x, &filter)?;
    let mu = mean(&dx);
    Ok(Prepared {
        kind: LinearKind::Arima,
        d,
        frac_d: 0.0,
        filter,
        mu,
        y: dx.into_iter().map(|v| v - mu).collect(),
        scale: abs_max(x),
    })
}

fn frac_depth(frac_d: f64, truncation: usize) -> usize {
    frac_diff_weights(frac_d, truncation).effective_depth()
}

fn prepare_arfima(x: &[f64], frac_d: f64, depth: usize) -> Result<Prepared, EconError> {
    let weights = frac_diff_weights(frac_d, depth);
    let mu = mean(x);
    let offset = mu * weights.sum();
    let y = apply_weights(x, &weights.w)?
        .into_iter()
        .map(|v| v - offset)
        .collect();
    Ok(Prepared {
        kind: LinearKind::Arfima,
        d: 0,
        frac_d,
        y,
        filter: weights.w,
        mu,
        scale: abs_max(x),
    })
}

fn assemble(prep: &Prepared, fit: ArmaFit) -> FittedLinearModel {
    let p = fit.phi.len();
    let q = fit.theta.len();
    let arma_warmup = p.max(q);
    let (e, _) = css_residuals(&prep.y, &fit.phi, &fit.theta, arma_warmup);
    FittedLinearModel {
        kind: prep.kind,
        order: ArimaOrder::new(p, prep.d, q),
        frac_d: prep.frac_d,
        warmup: prep.filter.len() - 1 + arma_warmup,
        filter: prep.filter.clone(),
        sigma2: fit.sigma2(),
        aic: fit.aic(),
        residuals: e[arma_warmup..].to_vec(),
        phi: fit.phi,
        theta: fit.theta,
        mu: prep.mu,
        converged: fit.converged,
    }
}

fn usable(fit: &ArmaFit) -> bool {
    let s2 = fit.sigma2();
    s2.is_finite() && s2 > f64::MIN_POSITIVE && fit.aic().is_finite()
}

/// Every (p, q) candidate that converges on one prepared series, in scan
/// order.
fn arma_candidates(prep: &Prepared, bounds: &OrderBounds) -> Vec<FittedLinearModel> {
    if prep.is_degenerate() {
        return Vec::new();
    }
    let grid: Vec<(usize, usize)> = (0..=bounds.p_max)
        .flat_map(|p| (0..=bounds.q_max).map(move |q| (p, q)))
        .collect();
    grid.par_iter()
        .map(|&(p, q)| fit_arma(&prep.y, p, q).filter(usable))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .map(|fit| assemble(prep, fit))
        .collect()
}

/// Lowest AIC; the first candidate in scan order wins ties.
fn select_min_aic(candidates: Vec<FittedLinearModel>) -> Option<FittedLinearModel> {
    candidates.into_iter().fold(None, |best, m| match best {
        Some(b) if b.aic <= m.aic => Some(b),
        _ => Some(m),
    })
}

/// Fits ARIMA(p, d, q) at one fixed order.
pub fn fit_arima_order(x: &[f64], order: ArimaOrder) -> Result<FittedLinearModel, EconError> {
    check_length(x)?;
    let prep = prepare_arima(x, order.d, order.d)?;
    let fit = Some(&prep)
        .filter(|p| !p.is_degenerate())
        .and_then(|p| fit_arma(&p.y, order.p, order.q))
        .filter(usable)
        .ok_or(EconError::NonConvergent(order))?;
    Ok(assemble(&prep, fit))
}

/// Every converging ARIMA candidate within `bounds`, scanned in (d, p, q)
/// order on a common estimation sample.
pub fn arima_candidates(
    x: &[f64],
    bounds: &OrderBounds,
) -> Result<Vec<FittedLinearModel>, EconError> {
    check_length(x)?;
    bounds.validate()?;
    let mut all = Vec::new();
    for d in 0..=bounds.d_max {
        let prep = prepare_arima(x, d, bounds.d_max)?;
        all.extend(arma_candidates(&prep, bounds));
    }
    Ok(all)
}

/// ARIMA with AIC order selection over `0..=p_max`, `0..=d_max`, `0..=q_max`.
pub fn fit_arima(x: &[f64], bounds: &OrderBounds) -> Result<FittedLinearModel, EconError> {
    select_min_aic(arima_candidates(x, bounds)?).ok_or(EconError::NonConvergent(ArimaOrder::new(
        bounds.p_max,
        bounds.d_max,
        bounds.q_max,
    )))
}

/// Fits ARFIMA(p, d, q) at a fixed fractional order.
pub fn fit_arfima_order(
    x: &[f64],
    frac_d: f64,
    p: usize,
    q: usize,
    truncation: usize,
) -> Result<FittedLinearModel, EconError> {
    check_length(x)?;
    arfima_at_depth(x, frac_d, p, q, frac_depth(frac_d, truncation))
}

fn arfima_at_depth(
    x: &[f64],
    frac_d: f64,
    p: usize,
    q: usize,
    depth: usize,
) -> Result<FittedLinearModel, EconError> {
    let prep = prepare_arfima(x, frac_d, depth)?;
    let fit = Some(&prep)
        .filter(|pr| !pr.is_degenerate())
        .and_then(|pr| fit_arma(&pr.y, p, q))
        .filter(usable)
        .ok_or(EconError::NonConvergent(ArimaOrder::new(p, 0, q)))?;
    Ok(assemble(&prep, fit))
}

/// Two-stage ARFIMA: for every `d` in the grid, fractionally difference and
/// select ARMA(p, q) by AIC; then optionally refine `d` by golden-section
/// search around the winning cell with its orders held fixed.
pub fn fit_arfima(
    x: &[f64],
    bounds: &OrderBounds,
    opts: &ArfimaOptions,
) -> Result<FittedLinearModel, EconError> {
    check_length(x)?;
    if opts.d_grid.is_empty() {
        return Err(EconError::InvalidConfig("empty fractional grid".into()));
    }
    if let Some(d) = opts.d_grid.iter().find(|d| !(d.abs() < 0.5)) {
        return Err(EconError::InvalidConfig(format!(
            "fractional order {d} outside (-0.5, 0.5)"
        )));
    }
    let need = opts.truncation + MIN_TRAIN_LEN;
    if x.len() < need {
        return Err(EconError::TooShort {
            needed: need,
            got: x.len(),
        });
    }

    let refine = opts.refine_radius > 0.0 && opts.d_grid.len() > 1;
    // Every candidate is scored on the same sample: the one left after the
    // deepest filter any candidate (or the refinement) will need.
    let depth = if refine {
        opts.truncation
    } else {
        opts.d_grid
            .iter()
            .map(|&d| frac_depth(d, opts.truncation))
            .max()
            .unwrap_or(0)
    };

    let mut candidates = Vec::new();
    for &d in &opts.d_grid {
        let prep = prepare_arfima(x, d, depth)?;
        candidates.extend(arma_candidates(&prep, bounds));
    }
    let mut best = select_min_aic(candidates).ok_or(EconError::NonConvergent(ArimaOrder::new(
        bounds.p_max,
        0,
        bounds.q_max,
    )))?;

    if refine {
        let (p, q) = (best.order.p, best.order.q);
        let lo = (best.frac_d - opts.refine_radius).max(-0.499);
        let hi = (best.frac_d + opts.refine_radius).min(0.499);
        let aic_at = |d: f64| arfima_at_depth(x, d, p, q, depth).map_or(f64::INFINITY, |m| m.aic);
        let (d_star, aic_star) = optim::golden_section(aic_at, lo, hi, 1e-3);
        if aic_star < best.aic {
            if let Ok(m) = arfima_at_depth(x, d_star, p, q, depth) {
                best = m;
            }
        }
    }
    Ok(best)
}
