//! Date-indexed price and return series, log-return transform, descriptive
//! statistics and CSV ingestion.

use std::cmp::Ordering;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("non-positive close price at line {line}")]
    NonPositivePrice { line: usize },
    #[error("duplicate date {0}")]
    DuplicateDate(NaiveDate),
    #[error("file contains no data rows")]
    EmptyFile,
    #[error("series too short: need at least {needed} observations, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("dates must be strictly increasing (offending date {0})")]
    Unordered(NaiveDate),
    #[error("dates and values differ in length ({dates} vs {values})")]
    LengthMismatch { dates: usize, values: usize },
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn check_increasing(dates: &[NaiveDate]) -> Result<(), SeriesError> {
    for w in dates.windows(2) {
        match w[0].cmp(&w[1]) {
            Ordering::Less => {}
            Ordering::Equal => return Err(SeriesError::DuplicateDate(w[1])),
            Ordering::Greater => return Err(SeriesError::Unordered(w[1])),
        }
    }
    Ok(())
}

/// Daily closing prices indexed by calendar date.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    dates: Vec<NaiveDate>,
    closes: Vec<f64>,
}

impl PriceSeries {
    pub fn new(dates: Vec<NaiveDate>, closes: Vec<f64>) -> Result<Self, SeriesError> {
        if dates.len() != closes.len() {
            return Err(SeriesError::LengthMismatch {
                dates: dates.len(),
                values: closes.len(),
            });
        }
        check_increasing(&dates)?;
        if let Some(i) = closes.iter().position(|c| !(c.is_finite() && *c > 0.0)) {
            // rows are 1-based after the header line
            return Err(SeriesError::NonPositivePrice { line: i + 2 });
        }
        Ok(Self { dates, closes })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn closes(&self) -> &[f64] {
        &self.closes
    }

    pub fn len(&self) -> usize {
        self.closes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.closes.is_empty()
    }

    /// Simple returns `P_t / P_{t-1} - 1`, dated at the later day.
    pub fn simple_returns(&self) -> Result<ReturnSeries, SeriesError> {
        if self.len() < 2 {
            return Err(SeriesError::TooShort {
                needed: 2,
                got: self.len(),
            });
        }
        let values = self.closes.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
        Ok(ReturnSeries {
            dates: self.dates[1..].to_vec(),
            values,
        })
    }
}

/// Real-valued observations indexed by strictly increasing dates.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    dates: Vec<NaiveDate>,
    values: Vec<f64>,
}

impl ReturnSeries {
    pub fn new(dates: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self, SeriesError> {
        if dates.len() != values.len() {
            return Err(SeriesError::LengthMismatch {
                dates: dates.len(),
                values: values.len(),
            });
        }
        check_increasing(&dates)?;
        Ok(Self { dates, values })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the first observation dated on or after `date`.
    pub fn index_at_or_after(&self, date: NaiveDate) -> usize {
        self.dates.partition_point(|d| *d < date)
    }
}

/// `r_t = ln P_t - ln P_{t-1}`, dated at the later day.
pub fn log_returns(prices: &PriceSeries) -> Result<ReturnSeries, SeriesError> {
    if prices.len() < 2 {
        return Err(SeriesError::TooShort {
            needed: 2,
            got: prices.len(),
        });
    }
    let values = prices
        .closes
        .windows(2)
        .map(|w| (w[1] / w[0]).ln())
        .collect();
    Ok(ReturnSeries {
        dates: prices.dates[1..].to_vec(),
        values,
    })
}

/// Summary statistics in the layout of a return-distribution table.
///
/// `skewness` is the adjusted Fisher-Pearson estimator and `kurtosis` the
/// bias-adjusted excess kurtosis (normal = 0). Both are `NaN` when the sample
/// is too small for the adjustment (n < 3 and n < 4 respectively).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DescriptiveStats {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
    pub std: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

/// Type-7 (linear interpolation) quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn describe(values: &[f64]) -> Result<DescriptiveStats, SeriesError> {
    let n = values.len();
    if n < 2 {
        return Err(SeriesError::TooShort { needed: 2, got: n });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);

    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let std = (m2 / (nf - 1.0)).sqrt();
    let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);

    let skewness = if n >= 3 && m2 > 0.0 {
        let g1 = m3 / m2.powf(1.5);
        g1 * (nf * (nf - 1.0)).sqrt() / (nf - 2.0)
    } else {
        f64::NAN
    };
    let kurtosis = if n >= 4 && m2 > 0.0 {
        let g2 = m4 / (m2 * m2) - 3.0;
        ((nf + 1.0) * g2 + 6.0) * (nf - 1.0) / ((nf - 2.0) * (nf - 3.0))
    } else {
        f64::NAN
    };

    Ok(DescriptiveStats {
        count: n,
        min: sorted[0],
        q1: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        mean,
        q3: quantile_sorted(&sorted, 0.75),
        max: sorted[n - 1],
        std,
        skewness,
        kurtosis,
    })
}

/// Layout of a price CSV file.
#[derive(Debug, Clone)]
pub struct CsvSpec {
    pub date_column: String,
    pub close_column: String,
    pub delimiter: u8,
    pub date_format: String,
}

impl Default for CsvSpec {
    fn default() -> Self {
        Self {
            date_column: "date".into(),
            close_column: "close".into(),
            delimiter: b',',
            date_format: "%Y-%m-%d".into(),
        }
    }
}

/// Reads a `date,close` file. Rows may arrive in any order; the result is
/// sorted by date. Missing or non-positive closes are rejected, never imputed.
pub fn ingest_csv(path: impl AsRef<Path>, spec: &CsvSpec) -> Result<PriceSeries, SeriesError> {
    let path = path.as_ref();
    let io_err = |source| SeriesError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(io_err)?;
    parse_csv(&text, spec)
}

pub fn parse_csv(text: &str, spec: &CsvSpec) -> Result<PriceSeries, SeriesError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(spec.delimiter)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());

    let headers = reader
        .headers()
        .map_err(|e| SeriesError::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    if headers.iter().all(|h| h.is_empty()) {
        return Err(SeriesError::EmptyFile);
    }
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}').eq_ignore_ascii_case(name))
            .ok_or_else(|| SeriesError::MalformedRow {
                line: 1,
                reason: format!("missing column `{name}`"),
            })
    };
    let date_col = column(&spec.date_column)?;
    let close_col = column(&spec.close_column)?;

    let mut rows: Vec<(NaiveDate, f64, usize)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| SeriesError::MalformedRow {
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let malformed = |reason: String| SeriesError::MalformedRow { line, reason };
        let date_raw = record
            .get(date_col)
            .ok_or_else(|| malformed("missing date field".into()))?;
        let close_raw = record
            .get(close_col)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| malformed("missing close field".into()))?;
        let date = NaiveDate::parse_from_str(date_raw, &spec.date_format)
            .map_err(|e| malformed(format!("bad date `{date_raw}`: {e}")))?;
        let close: f64 = close_raw
            .parse()
            .map_err(|_| malformed(format!("bad close `{close_raw}`")))?;
        if !close.is_finite() {
            return Err(malformed(format!("non-finite close `{close_raw}`")));
        }
        if close <= 0.0 {
            return Err(SeriesError::NonPositivePrice { line });
        }
        rows.push((date, close, line));
    }
    if rows.is_empty() {
        return Err(SeriesError::EmptyFile);
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(SeriesError::DuplicateDate(w[1].0));
    }
    let (dates, closes) = rows.into_iter().map(|(d, c, _)| (d, c)).unzip();
    PriceSeries::new(dates, closes)
}
