//! Linear/nonlinear hybrids, the pure learner baseline, and the method
//! labels used in result tables.
//!
//! Feature mode (1) appends the linear one-step forecast to the lagged
//! returns and lets the learner produce the final prediction. Residual
//! mode (2) fits the learner to lagged linear residuals and adds its output
//! to the linear forecast.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::econometric::{EconError, FittedLinearModel, LinearKind};
use crate::learners::{FeatureMatrix, LearnerError, LearnerSpec, Regressor};

#[derive(Debug, Error)]
pub enum HybridError {
    #[error(transparent)]
    Linear(#[from] EconError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("history too short: need at least {needed} observations, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("linear fit failed: {0}")]
    CachedLinear(String),
    #[error("unknown method label {0:?}")]
    UnknownMethod(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// Linear forecast used as an extra learner input.
    Feature,
    /// Learner fitted to linear residuals, outputs summed.
    Residual,
}

impl Mode {
    pub fn number(self) -> u8 {
        match self {
            Mode::Feature => 1,
            Mode::Residual => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LearnerKind {
    Svr,
    Gbt,
    Lstm,
}

impl LearnerKind {
    pub fn label(self) -> &'static str {
        match self {
            LearnerKind::Svr => "SVM",
            LearnerKind::Gbt => "XGBoost",
            LearnerKind::Lstm => "LSTM",
        }
    }

    pub fn of(spec: &LearnerSpec) -> Self {
        match spec {
            LearnerSpec::Svr(_) => LearnerKind::Svr,
            LearnerSpec::Gbt(_) => LearnerKind::Gbt,
            LearnerSpec::Lstm(_) => LearnerKind::Lstm,
        }
    }
}

/// One row of the results tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    BuyAndHold,
    Linear(LinearKind),
    Learner(LearnerKind),
    Hybrid {
        learner: LearnerKind,
        linear: LinearKind,
        mode: Mode,
    },
}

const LINEARS: [LinearKind; 2] = [LinearKind::Arima, LinearKind::Arfima];
const LEARNERS: [LearnerKind; 3] = [LearnerKind::Svr, LearnerKind::Gbt, LearnerKind::Lstm];

impl Method {
    /// Buy&Hold followed by the 17 forecasting methods in table order.
    pub fn all() -> Vec<Method> {
        let mut out = vec![Method::BuyAndHold];
        out.extend(LINEARS.map(Method::Linear));
        for learner in LEARNERS {
            out.push(Method::Learner(learner));
            for mode in [Mode::Feature, Mode::Residual] {
                for linear in LINEARS {
                    out.push(Method::Hybrid {
                        learner,
                        linear,
                        mode,
                    });
                }
            }
        }
        out
    }

    pub fn label(&self) -> String {
        match self {
            Method::BuyAndHold => "Buy&Hold".into(),
            Method::Linear(k) => k.label().into(),
            Method::Learner(l) => l.label().into(),
            Method::Hybrid {
                learner,
                linear,
                mode,
            } => format!("{}-{} ({})", learner.label(), linear.label(), mode.number()),
        }
    }

    pub fn linear_kind(&self) -> Option<LinearKind> {
        match self {
            Method::Linear(k) | Method::Hybrid { linear: k, .. } => Some(*k),
            _ => None,
        }
    }

    pub fn learner_kind(&self) -> Option<LearnerKind> {
        match self {
            Method::Learner(l) | Method::Hybrid { learner: l, .. } => Some(*l),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn canonical(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

impl FromStr for Method {
    type Err = HybridError;

    /// Case-insensitive; whitespace is ignored, so `svm-arima(1)` and
    /// `SVM-ARIMA (1)` name the same method.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = canonical(s);
        let aliases: &[(&str, Method)] = &[
            ("buyandhold", Method::BuyAndHold),
            ("buy-and-hold", Method::BuyAndHold),
            ("svr", Method::Learner(LearnerKind::Svr)),
            ("gbt", Method::Learner(LearnerKind::Gbt)),
        ];
        if let Some((_, m)) = aliases.iter().find(|(a, _)| *a == key) {
            return Ok(*m);
        }
        Method::all()
            .into_iter()
            .find(|m| canonical(&m.label()) == key)
            .ok_or_else(|| HybridError::UnknownMethod(s.to_string()))
    }
}

/// A fitted one-step-ahead forecaster. `history` is the full return series
/// available up to (excluding) the target day, oldest first.
pub trait Forecaster: Send + Sync {
    fn min_history(&self) -> usize;

    fn forecast(&self, history: &[f64]) -> Result<f64, HybridError>;
}

/// Linear model as a forecaster.
#[derive(Debug, Clone)]
pub struct LinearForecaster(pub FittedLinearModel);

impl Forecaster for LinearForecaster {
    fn min_history(&self) -> usize {
        self.0.min_history()
    }

    fn forecast(&self, history: &[f64]) -> Result<f64, HybridError> {
        Ok(self.0.forecast_one(history)?)
    }
}

fn too_short(needed: usize, got: usize) -> Result<(), HybridError> {
    if got < needed {
        Err(HybridError::TooShort { needed, got })
    } else {
        Ok(())
    }
}

/// Learner on `lag_n` lagged raw returns.
pub struct LearnerModel {
    pub nonlinear: Box<dyn Regressor>,
    pub lag_n: usize,
}

impl LearnerModel {
    pub fn fit_with<F>(train: &[f64], lag_n: usize, fit: F) -> Result<Self, HybridError>
    where
        F: FnOnce(&FeatureMatrix) -> Result<Box<dyn Regressor>, LearnerError>,
    {
        let x = crate::learners::make_lag_features(train, lag_n, None)?;
        Ok(Self {
            nonlinear: fit(&x)?,
            lag_n,
        })
    }

    pub fn fit(
        spec: &LearnerSpec,
        lag_n: usize,
        train: &[f64],
        seed: u64,
    ) -> Result<Self, HybridError> {
        Self::fit_with(train, lag_n, |x| spec.fit(x, seed))
    }
}

impl Forecaster for LearnerModel {
    fn min_history(&self) -> usize {
        self.lag_n + self.nonlinear.context_rows() - 1
    }

    fn forecast(&self, history: &[f64]) -> Result<f64, HybridError> {
        too_short(self.min_history(), history.len())?;
        let t_end = history.len();
        let k = self.nonlinear.context_rows();
        let mut rows = Vec::with_capacity(k * self.lag_n);
        for tau in t_end + 1 - k..=t_end {
            rows.extend((1..=self.lag_n).map(|j| history[tau - j]));
        }
        Ok(self.nonlinear.predict(&rows)?)
    }
}

/// Linear residuals over `series` with fixed parameters: the index of the
/// first available residual, the residuals from there on, and the linear
/// forecast for the step after the series.
fn linear_pass(
    linear: &FittedLinearModel,
    series: &[f64],
) -> Result<(usize, Vec<f64>, f64), HybridError> {
    let trace = linear.run_filter(series)?;
    let start = trace
        .residuals
        .iter()
        .position(Option::is_some)
        .unwrap_or(series.len());
    let e = trace.residuals[start..]
        .iter()
        .map(|r| r.unwrap_or(0.0))
        .collect();
    Ok((start, e, trace.next))
}

pub struct HybridModel {
    pub linear: FittedLinearModel,
    pub nonlinear: Box<dyn Regressor>,
    pub mode: Mode,
    pub lag_n: usize,
}

impl HybridModel {
    /// Training design for the learner: lagged residuals (residual mode) or
    /// lagged returns plus the in-sample linear fitted value (feature mode).
    pub fn training_matrix(
        linear: &FittedLinearModel,
        mode: Mode,
        lag_n: usize,
        train: &[f64],
    ) -> Result<FeatureMatrix, HybridError> {
        let (start, e, _) = linear_pass(linear, train)?;
        match mode {
            Mode::Residual => Ok(crate::learners::make_lag_features(&e, lag_n, None)?),
            Mode::Feature => {
                let t0 = start.max(lag_n);
                too_short(t0 + 2, train.len())?;
                let mut data = Vec::with_capacity((train.len() - t0) * (lag_n + 1));
                for t in t0..train.len() {
                    data.extend((1..=lag_n).map(|j| train[t - j]));
                    data.push(train[t] - e[t - start]);
                }
                Ok(FeatureMatrix::new(lag_n + 1, data, train[t0..].to_vec())?)
            }
        }
    }

    /// Fits the learner on the design built from an already fitted linear
    /// model (which is expected to have been estimated on `train`).
    pub fn fit_with<F>(
        linear: FittedLinearModel,
        mode: Mode,
        lag_n: usize,
        train: &[f64],
        fit: F,
    ) -> Result<Self, HybridError>
    where
        F: FnOnce(&FeatureMatrix) -> Result<Box<dyn Regressor>, LearnerError>,
    {
        let x = Self::training_matrix(&linear, mode, lag_n, train)?;
        let nonlinear = fit(&x)?;
        Ok(Self {
            linear,
            nonlinear,
            mode,
            lag_n,
        })
    }

    pub fn fit(
        linear: FittedLinearModel,
        spec: &LearnerSpec,
        mode: Mode,
        lag_n: usize,
        train: &[f64],
        seed: u64,
    ) -> Result<Self, HybridError> {
        Self::fit_with(linear, mode, lag_n, train, |x| spec.fit(x, seed))
    }

    /// Linear forecast, learner output and combined forecast.
    pub fn forecast_parts(&self, history: &[f64]) -> Result<(f64, f64, f64), HybridError> {
        too_short(self.min_history(), history.len())?;
        let (start, e, l_next) = linear_pass(&self.linear, history)?;
        let t_end = history.len();
        let k = self.nonlinear.context_rows();
        let mut rows = Vec::with_capacity(k * (self.lag_n + 1));
        for tau in t_end + 1 - k..=t_end {
            match self.mode {
                Mode::Residual => rows.extend((1..=self.lag_n).map(|j| e[tau - j - start])),
                Mode::Feature => {
                    rows.extend((1..=self.lag_n).map(|j| history[tau - j]));
                    rows.push(if tau == t_end {
                        l_next
                    } else {
                        history[tau] - e[tau - start]
                    });
                }
            }
        }
        let n_hat = self.nonlinear.predict(&rows)?;
        let combined = match self.mode {
            Mode::Residual => l_next + n_hat,
            Mode::Feature => n_hat,
        };
        Ok((l_next, n_hat, combined))
    }
}

impl Forecaster for HybridModel {
    fn min_history(&self) -> usize {
        let w = self.linear.min_history().max(self.linear.warmup);
        let k = self.nonlinear.context_rows();
        match self.mode {
            Mode::Residual => w + self.lag_n + k - 1,
            Mode::Feature => w.max(self.lag_n) + k - 1,
        }
    }

    fn forecast(&self, history: &[f64]) -> Result<f64, HybridError> {
        self.forecast_parts(history).map(|(_, _, y)| y)
    }
}
