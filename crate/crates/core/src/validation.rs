//! Rolling walk-forward windows with nested validation folds, grid search
//! over candidate configurations, and out-of-sample forecast assembly.

use std::time::{Duration, Instant};

use chrono::{Months, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hybrid::{Forecaster, HybridError};
use crate::timeseries::ReturnSeries;

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("series covers {have}, plan needs {need}")]
    InsufficientSpan { need: String, have: String },
    #[error("invalid window plan: {0}")]
    InvalidPlan(String),
    #[error("empty candidate grid")]
    EmptyGrid,
    #[error("window {window}: validation fold {fold} contains no observations")]
    EmptyFold { window: usize, fold: usize },
    #[error("window {window}: every candidate failed; first error: {first}")]
    AllCandidatesFailed { window: usize, first: String },
    #[error("window {window}: {source}")]
    Model {
        window: usize,
        #[source]
        source: HybridError,
    },
}

/// Calendar geometry of the rolling windows, in months.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub start: NaiveDate,
    /// Last calendar day covered by the final test range.
    pub end: NaiveDate,
    pub train_months: u32,
    /// Nested validation prefixes, shortest first.
    pub val_months: [u32; 3],
    pub test_months: u32,
    pub step_months: u32,
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid calendar date")
}

impl WindowPlan {
    pub fn sp500() -> Self {
        Self {
            start: ymd(2002, 1, 1),
            end: ymd(2023, 12, 31),
            train_months: 36,
            val_months: [8, 16, 24],
            test_months: 12,
            step_months: 12,
        }
    }

    pub fn bitcoin() -> Self {
        Self {
            start: ymd(2015, 1, 1),
            end: ymd(2023, 12, 31),
            train_months: 24,
            val_months: [4, 8, 12],
            test_months: 6,
            step_months: 6,
        }
    }

    fn validate(&self) -> Result<(), ValidationError> {
        let v = self.val_months;
        if self.train_months == 0 || self.test_months == 0 || self.step_months == 0 {
            return Err(ValidationError::InvalidPlan(
                "train, test and step lengths must be positive".into(),
            ));
        }
        if !(0 < v[0] && v[0] <= v[1] && v[1] <= v[2]) {
            return Err(ValidationError::InvalidPlan(format!(
                "validation prefixes must be positive and non-decreasing, got {v:?}"
            )));
        }
        if self.end < self.start {
            return Err(ValidationError::InvalidPlan("end precedes start".into()));
        }
        Ok(())
    }

    /// Whole calendar months from `start` to the day after `end`.
    pub fn span_months(&self) -> u32 {
        let stop = self.end.succ_opt().expect("date in range");
        let mut months = 0;
        while add_months(self.start, months + 1) <= stop {
            months += 1;
        }
        months
    }

    /// `floor((span - train - max(val) - test) / step) + 1`, or 0 when a
    /// single window does not fit.
    pub fn window_count(&self) -> usize {
        let need = self.train_months + self.val_months[2] + self.test_months;
        let span = self.span_months();
        if span < need {
            0
        } else {
            ((span - need) / self.step_months) as usize + 1
        }
    }
}

fn add_months(d: NaiveDate, m: u32) -> NaiveDate {
    d.checked_add_months(Months::new(m)).expect("date in range")
}

/// Half-open calendar interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d < self.end
    }

    /// Index range of the observations of `series` inside the interval.
    pub fn indices(&self, series: &ReturnSeries) -> std::ops::Range<usize> {
        series.index_at_or_after(self.start)..series.index_at_or_after(self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub index: usize,
    pub train: DateRange,
    /// Nested prefixes of the validation span, all starting where training ends.
    pub val: [DateRange; 3],
    pub test: DateRange,
}

impl FoldSplit {
    /// Training plus the full validation span, used for the final refit.
    pub fn refit(&self) -> DateRange {
        DateRange {
            start: self.train.start,
            end: self.val[2].end,
        }
    }
}

/// Windows laid out by `plan`; when `series` is given it must cover the
/// first training start and the last test range.
pub fn make_windows(
    plan: &WindowPlan,
    series: Option<&ReturnSeries>,
) -> Result<Vec<FoldSplit>, ValidationError> {
    plan.validate()?;
    let count = plan.window_count();
    if count == 0 {
        return Err(ValidationError::InsufficientSpan {
            need: format!(
                "{} months",
                plan.train_months + plan.val_months[2] + plan.test_months
            ),
            have: format!("{} months", plan.span_months()),
        });
    }
    let windows: Vec<FoldSplit> = (0..count)
        .map(|k| {
            let anchor = add_months(plan.start, k as u32 * plan.step_months);
            let val_start = add_months(anchor, plan.train_months);
            let test_start = add_months(val_start, plan.val_months[2]);
            FoldSplit {
                index: k,
                train: DateRange {
                    start: anchor,
                    end: val_start,
                },
                val: plan.val_months.map(|m| DateRange {
                    start: val_start,
                    end: add_months(val_start, m),
                }),
                test: DateRange {
                    start: test_start,
                    end: add_months(test_start, plan.test_months),
                },
            }
        })
        .collect();
    if let Some(s) = series {
        let (first, last) = (windows[0], windows[count - 1]);
        let covered = match (s.dates().first(), s.dates().last()) {
            (Some(&a), Some(&b)) => a < first.train.end && b >= last.test.start,
            _ => false,
        };
        if !covered {
            return Err(ValidationError::InsufficientSpan {
                need: format!("{} .. {}", first.train.start, plan.end),
                have: match (s.dates().first(), s.dates().last()) {
                    (Some(a), Some(b)) => format!("{a} .. {b}"),
                    _ => "no observations".into(),
                },
            });
        }
    }
    Ok(windows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateScore {
    pub candidate: usize,
    /// RMSE on each nested validation fold; `None` when the fit failed.
    pub fold_rmse: Option<[f64; 3]>,
    pub mean_rmse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSearchReport {
    pub scores: Vec<CandidateScore>,
    pub chosen: usize,
}

fn rmse(errors: &[f64]) -> f64 {
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

/// Scores every candidate: fit on `values[hist_start..train_end]`, then
/// forecast each validation day with all data before it, and average the
/// RMSE over the three nested folds ending at `fold_ends`. The minimiser
/// wins; ties go to the earlier candidate.
pub fn grid_search<C, F>(
    values: &[f64],
    hist_start: usize,
    train_end: usize,
    fold_ends: [usize; 3],
    grid: &[C],
    fit: F,
) -> Result<GridSearchReport, String>
where
    C: Sync,
    F: Fn(usize, &C, &[f64]) -> Result<Box<dyn Forecaster>, HybridError> + Sync,
{
    let score = |idx: usize, cand: &C| -> Result<[f64; 3], String> {
        let model = fit(idx, cand, &values[hist_start..train_end]).map_err(|e| e.to_string())?;
        let mut errors = Vec::with_capacity(fold_ends[2] - train_end);
        for t in train_end..fold_ends[2] {
            let f = model
                .forecast(&values[hist_start..t])
                .map_err(|e| e.to_string())?;
            if !f.is_finite() {
                return Err(format!("non-finite forecast {f}"));
            }
            errors.push(f - values[t]);
        }
        Ok(fold_ends.map(|end| rmse(&errors[..end - train_end])))
    };
    let scores: Vec<CandidateScore> = grid
        .par_iter()
        .enumerate()
        .map(|(idx, cand)| match score(idx, cand) {
            Ok(folds) => CandidateScore {
                candidate: idx,
                fold_rmse: Some(folds),
                mean_rmse: Some((folds[0] + folds[1] + folds[2]) / 3.0),
                error: None,
            },
            Err(e) => CandidateScore {
                candidate: idx,
                fold_rmse: None,
                mean_rmse: None,
                error: Some(e),
            },
        })
        .collect();
    let mut chosen: Option<(usize, f64)> = None;
    for s in &scores {
        if let Some(m) = s.mean_rmse.filter(|m| m.is_finite()) {
            if chosen.is_none_or(|(_, best)| m < best) {
                chosen = Some((s.candidate, m));
            }
        }
    }
    match chosen {
        Some((idx, _)) => Ok(GridSearchReport {
            scores,
            chosen: idx,
        }),
        None => Err(scores
            .iter()
            .find_map(|s| s.error.clone())
            .unwrap_or_else(|| "no finite validation score".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    /// Fit on the training range while scoring candidates.
    Selection,
    /// Refit of the chosen candidate on training plus validation.
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FitContext {
    pub window: usize,
    pub stage: Stage,
    pub candidate: usize,
}

/// Dates bounding the data behind one forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AuditRecord {
    pub target: NaiveDate,
    /// Latest observation in the history passed to the forecaster.
    pub latest_history: NaiveDate,
    /// Latest observation used to fit the model (and its scalers).
    pub latest_fit: NaiveDate,
}

impl AuditRecord {
    pub fn is_clean(&self) -> bool {
        self.latest_history < self.target && self.latest_fit < self.target
    }
}

/// First audit record that consumed data dated on or after its target.
pub fn find_leak(records: &[AuditRecord]) -> Option<&AuditRecord> {
    records.iter().find(|r| !r.is_clean())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatedForecast {
    pub date: NaiveDate,
    pub forecast: f64,
    pub actual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowResult {
    pub index: usize,
    pub split: FoldSplit,
    pub chosen: usize,
    /// Present when the grid had more than one candidate.
    pub report: Option<GridSearchReport>,
    pub forecasts: Vec<DatedForecast>,
    #[serde(skip)]
    pub audit: Vec<AuditRecord>,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Serialize)]
pub struct WalkForward {
    pub windows: Vec<WindowResult>,
}

impl WalkForward {
    pub fn forecasts(&self) -> impl Iterator<Item = &DatedForecast> {
        self.windows.iter().flat_map(|w| w.forecasts.iter())
    }

    pub fn audit(&self) -> impl Iterator<Item = &AuditRecord> {
        self.windows.iter().flat_map(|w| w.audit.iter())
    }
}

fn run_window<C, F>(
    series: &ReturnSeries,
    split: &FoldSplit,
    grid: &[C],
    fit: &F,
) -> Result<WindowResult, ValidationError>
where
    C: Sync,
    F: Fn(&C, &[f64], FitContext) -> Result<Box<dyn Forecaster>, HybridError> + Sync,
{
    let clock = Instant::now();
    let window = split.index;
    let values = series.values();
    let dates = series.dates();
    let train = split.train.indices(series);
    let fold_ends = split.val.map(|r| r.indices(series).end);
    for (fold, &end) in fold_ends.iter().enumerate() {
        if end <= train.end {
            return Err(ValidationError::EmptyFold { window, fold });
        }
    }

    let (chosen, report) = if grid.len() == 1 {
        (0, None)
    } else {
        let report = grid_search(
            values,
            train.start,
            train.end,
            fold_ends,
            grid,
            |candidate, c, slice| {
                fit(
                    c,
                    slice,
                    FitContext {
                        window,
                        stage: Stage::Selection,
                        candidate,
                    },
                )
            },
        )
        .map_err(|first| ValidationError::AllCandidatesFailed { window, first })?;
        (report.chosen, Some(report))
    };

    let refit_end = fold_ends[2];
    let model = fit(
        &grid[chosen],
        &values[train.start..refit_end],
        FitContext {
            window,
            stage: Stage::Final,
            candidate: chosen,
        },
    )
    .map_err(|source| ValidationError::Model { window, source })?;
    let latest_fit = dates[refit_end - 1];

    let test = split.test.indices(series);
    let mut forecasts = Vec::with_capacity(test.len());
    let mut audit = Vec::with_capacity(test.len());
    for t in test {
        let history = &values[train.start..t];
        let f = model
            .forecast(history)
            .map_err(|source| ValidationError::Model { window, source })?;
        forecasts.push(DatedForecast {
            date: dates[t],
            forecast: f,
            actual: values[t],
        });
        audit.push(AuditRecord {
            target: dates[t],
            latest_history: dates[train.start + history.len() - 1],
            latest_fit,
        });
    }
    Ok(WindowResult {
        index: window,
        split: *split,
        chosen,
        report,
        forecasts,
        audit,
        elapsed: clock.elapsed(),
    })
}

/// Runs every window (in parallel) and returns them in window order. Each
/// test day is forecast by its window's final model from all observations
/// between the window's training start and the previous day.
pub fn run_walk_forward<C, F>(
    series: &ReturnSeries,
    splits: &[FoldSplit],
    grid: &[C],
    fit: F,
) -> Result<WalkForward, ValidationError>
where
    C: Sync,
    F: Fn(&C, &[f64], FitContext) -> Result<Box<dyn Forecaster>, HybridError> + Sync,
{
    if grid.is_empty() {
        return Err(ValidationError::EmptyGrid);
    }
    let windows = splits
        .par_iter()
        .map(|split| run_window(series, split, grid, &fit))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(WalkForward { windows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn business_days(from: NaiveDate, to: NaiveDate) -> Vec<NaiveDate> {
        use chrono::Datelike;
        from.iter_days()
            .take_while(|d| *d <= to)
            .filter(|d| d.weekday().num_days_from_monday() < 5)
            .collect()
    }

    struct LastValue;

    impl Forecaster for LastValue {
        fn min_history(&self) -> usize {
            1
        }
        fn forecast(&self, history: &[f64]) -> Result<f64, HybridError> {
            Ok(*history.last().unwrap())
        }
    }

    #[test]
    fn preset_window_counts() {
        let sp = make_windows(&WindowPlan::sp500(), None).unwrap();
        assert_eq!(sp.len(), 17);
        assert_eq!(WindowPlan::sp500().span_months(), 264);
        assert_eq!(sp[0].test.start, ymd(2007, 1, 1));
        assert_eq!(sp[16].test.end, ymd(2024, 1, 1));
        let btc = make_windows(&WindowPlan::bitcoin(), None).unwrap();
        assert_eq!(btc.len(), 12);
        assert_eq!(
            btc[0].test,
            DateRange {
                start: ymd(2018, 1, 1),
                end: ymd(2018, 7, 1)
            }
        );
        assert_eq!(btc[11].test.end, ymd(2024, 1, 1));
        for w in sp.iter().chain(&btc) {
            assert!(w.train.end == w.val[0].start && w.val[2].end == w.test.start);
            assert!(w.val[0].end <= w.val[1].end && w.val[1].end <= w.val[2].end);
        }
    }

    #[test]
    fn tests_tile_without_gaps() {
        let plan = WindowPlan {
            start: ymd(2010, 3, 1),
            end: ymd(2015, 2, 28),
            train_months: 12,
            val_months: [2, 3, 6],
            test_months: 3,
            step_months: 3,
        };
        let w = make_windows(&plan, None).unwrap();
        assert_eq!(w.len(), ((60 - 21) / 3 + 1) as usize);
        for pair in w.windows(2) {
            assert_eq!(pair[0].test.end, pair[1].test.start);
        }
        assert_eq!(w.last().unwrap().test.end, ymd(2015, 3, 1));
    }

    #[test]
    fn insufficient_span_is_reported() {
        let plan = WindowPlan {
            end: ymd(2004, 12, 31),
            ..WindowPlan::sp500()
        };
        assert!(matches!(
            make_windows(&plan, None),
            Err(ValidationError::InsufficientSpan { .. })
        ));
        let dates = business_days(ymd(2010, 1, 1), ymd(2012, 1, 1));
        let s = ReturnSeries::new(dates.clone(), vec![0.0; dates.len()]).unwrap();
        assert!(matches!(
            make_windows(&WindowPlan::sp500(), Some(&s)),
            Err(ValidationError::InsufficientSpan { .. })
        ));
    }

    #[test]
    fn naive_walk_forward_shifts_by_one() {
        let dates = business_days(ymd(2015, 1, 1), ymd(2023, 12, 31));
        let values: Vec<f64> = (0..dates.len()).map(|i| ((i * 31) % 17) as f64).collect();
        let s = ReturnSeries::new(dates.clone(), values.clone()).unwrap();
        let splits = make_windows(&WindowPlan::bitcoin(), Some(&s)).unwrap();
        let wf = run_walk_forward(&s, &splits, &[()], |_, _, _| Ok(Box::new(LastValue))).unwrap();
        let first_test = s.index_at_or_after(ymd(2018, 1, 1));
        let out: Vec<&DatedForecast> = wf.forecasts().collect();
        assert_eq!(out.len(), dates.len() - first_test);
        for (k, f) in out.iter().enumerate() {
            let t = first_test + k;
            assert_eq!(f.date, dates[t]);
            assert_eq!(f.forecast, values[t - 1]);
            assert_eq!(f.actual, values[t]);
        }
        assert!(find_leak(&wf.audit().copied().collect::<Vec<_>>()).is_none());
        let march = wf
            .windows
            .iter()
            .find(|w| w.split.test.contains(ymd(2020, 3, 16)))
            .unwrap();
        assert!(march.split.val[2].end <= ymd(2020, 1, 1));
    }

    #[test]
    fn grid_scores_average_folds_and_break_ties_first() {
        let values: Vec<f64> = (0..40).map(|i| (i % 3) as f64).collect();
        struct Const(f64);
        impl Forecaster for Const {
            fn min_history(&self) -> usize {
                0
            }
            fn forecast(&self, _: &[f64]) -> Result<f64, HybridError> {
                Ok(self.0)
            }
        }
        let grid = [5.0, 1.0, 1.0, 0.0];
        let r = grid_search(&values, 0, 20, [26, 32, 40], &grid, |_, c, _| {
            Ok(Box::new(Const(*c)))
        })
        .unwrap();
        assert_eq!(r.chosen, 1);
        for s in &r.scores {
            let f = s.fold_rmse.unwrap();
            assert_eq!(s.mean_rmse.unwrap(), (f[0] + f[1] + f[2]) / 3.0);
        }
        let single = grid_search(&values, 0, 20, [26, 32, 40], &[2.0], |_, c, _| {
            Ok(Box::new(Const(*c)))
        })
        .unwrap();
        assert_eq!(single.chosen, 0);
        assert_eq!(single.scores[0].fold_rmse.unwrap().len(), 3);
    }
}
