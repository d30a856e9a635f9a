//! Nonlinear regressors over lagged-return feature matrices: epsilon-SVR,
//! gradient-boosted regression trees and a single-layer LSTM.

pub mod gbt;
pub mod lstm;
pub mod svr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gbt::{GbtEnsemble, GbtParams};
pub use lstm::{LstmNetwork, LstmParams};
pub use svr::{Kernel, SvrModel, SvrParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("series too short: need at least {needed} observations, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("linear forecast column has {got} entries, expected {expected}")]
    MisalignedForecast { expected: usize, got: usize },
    #[error("expected {expected} inputs, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training loss became non-finite at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },
    #[error("invalid hyperparameter: {0}")]
    InvalidParam(String),
}

/// Row-major design matrix with an aligned target vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_cols: usize,
    data: Vec<f64>,
    target: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n_cols: usize, data: Vec<f64>, target: Vec<f64>) -> Result<Self, LearnerError> {
        if n_cols == 0 || data.len() != n_cols * target.len() {
            return Err(LearnerError::DimensionMismatch {
                expected: n_cols * target.len(),
                got: data.len(),
            });
        }
        if let Some(bad) = data.iter().chain(&target).find(|v| !v.is_finite()) {
            return Err(LearnerError::InvalidParam(format!("non-finite cell {bad}")));
        }
        Ok(Self {
            n_cols,
            data,
            target,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    /// `count` consecutive rows ending at `last`, flattened oldest first.
    pub fn rows_ending_at(&self, last: usize, count: usize) -> &[f64] {
        &self.data[(last + 1 - count) * self.n_cols..(last + 1) * self.n_cols]
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Row `t` holds `[y_{t-1}, .., y_{t-n}]` (plus the linear forecast for `t`
/// when given) and targets `y_t`, for `t = n..len`.
pub fn make_lag_features(
    y: &[f64],
    n: usize,
    linear_forecast: Option<&[f64]>,
) -> Result<FeatureMatrix, LearnerError> {
    if n == 0 {
        return Err(LearnerError::InvalidParam(
            "lag count must be positive".into(),
        ));
    }
    if y.len() <= n {
        return Err(LearnerError::TooShort {
            needed: n + 1,
            got: y.len(),
        });
    }
    let rows = y.len() - n;
    if let Some(lf) = linear_forecast {
        if lf.len() != rows {
            return Err(LearnerError::MisalignedForecast {
                expected: rows,
                got: lf.len(),
            });
        }
    }
    let n_cols = n + usize::from(linear_forecast.is_some());
    let mut data = Vec::with_capacity(rows * n_cols);
    for t in n..y.len() {
        data.extend((1..=n).map(|k| y[t - k]));
        if let Some(lf) = linear_forecast {
            data.push(lf[t - n]);
        }
    }
    FeatureMatrix::new(n_cols, data, y[n..].to_vec())
}

/// Per-column affine normalisation `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    /// Column statistics of a row-major matrix; zero-variance columns keep
    /// unit scale.
    pub fn fit(data: &[f64], n_cols: usize) -> Self {
        let rows = data.len() / n_cols;
        let mut mean = vec![0.0; n_cols];
        for r in data.chunks(n_cols) {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / rows as f64;
            }
        }
        let mut var = vec![0.0; n_cols];
        for r in data.chunks(n_cols) {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m).powi(2) / rows as f64;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v > 0.0 { v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().cycle().zip(self.scale.iter().cycle()))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// A fitted model mapping recent feature rows to a one-step prediction.
pub trait Regressor: Send + Sync {
    fn n_features(&self) -> usize;

    /// Number of consecutive feature rows consumed per prediction.
    fn context_rows(&self) -> usize {
        1
    }

    /// `rows` holds `context_rows()` rows flattened oldest first; the last
    /// row describes the step being predicted.
    fn predict(&self, rows: &[f64]) -> Result<f64, LearnerError>;
}

pub(crate) fn check_input(rows: &[f64], expected: usize) -> Result<(), LearnerError> {
    if rows.len() != expected {
        return Err(LearnerError::DimensionMismatch {
            expected,
            got: rows.len(),
        });
    }
    Ok(())
}

/// Which learner to train and with what hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LearnerSpec {
    Svr(SvrParams),
    Gbt(GbtParams),
    Lstm(LstmParams),
}

impl LearnerSpec {
    pub fn fit(&self, x: &FeatureMatrix, seed: u64) -> Result<Box<dyn Regressor>, LearnerError> {
        Ok(match self {
            LearnerSpec::Svr(p) => Box::new(svr::svr_fit(x, p)?),
            LearnerSpec::Gbt(p) => Box::new(gbt::gbt_fit(x, p)?),
            LearnerSpec::Lstm(p) => Box::new(lstm::lstm_fit(x, &LstmParams { seed, ..p.clone() })?),
        })
    }

    /// Rows of history a forecast needs beyond the lag window.
    pub fn context_rows(&self) -> usize {
        match self {
            LearnerSpec::Lstm(p) => p.sequence_length,
            _ => 1,
        }
    }
}
