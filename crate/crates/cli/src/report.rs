//! Tables, equity lines, plots and the run manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use hybridcast::backtest::{portfolio, BacktestResult, Metrics};
use hybridcast::hybrid::Method;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, StrategyName};
use crate::runner::{AssetRun, ExperimentRun};
use crate::svg::{equity_chart, Line};
use crate::CliError;

pub const METRICS_HEADER: &str = "method,rmse,mae,arc,asd,md,ir,ir_star,sr";
pub const EQUITY_HEADER: &str = "date,method,equity";
pub const FORECAST_HEADER: &str = "date,method,forecast,actual";

/// Fixed-point text without a negative sign on values that round to zero.
fn fixed(x: f64, decimals: usize) -> String {
    let s = format!("{x:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// One table row; error metrics and ARC/ASD/MD in percent.
pub fn metrics_row(label: &str, m: &Metrics) -> String {
    let opt = |v: Option<f64>| v.map(|x| fixed(100.0 * x, 4)).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{},{}",
        label,
        opt(m.rmse),
        opt(m.mae),
        fixed(100.0 * m.arc, 2),
        fixed(100.0 * m.asd, 2),
        fixed(100.0 * m.md, 2),
        fixed(m.ir, 2),
        fixed(m.ir_star, 2),
        fixed(m.sr, 2),
    )
}

pub fn metrics_table(rows: &[(String, &BacktestResult)]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for (label, r) in rows {
        out.push_str(&metrics_row(label, &r.metrics));
        out.push('\n');
    }
    out
}

pub fn equity_table(rows: &[(String, &BacktestResult)]) -> String {
    let mut out = String::from(EQUITY_HEADER);
    out.push('\n');
    for (label, r) in rows {
        for (d, v) in r.dates.iter().zip(&r.equity) {
            let _ = writeln!(out, "{d},{label},{v:.10}");
        }
    }
    out
}

struct Writer {
    dir: PathBuf,
    files: Vec<String>,
}

impl Writer {
    fn put(&mut self, name: String, body: &str) -> Result<(), CliError> {
        let path = self.dir.join(&name);
        std::fs::write(&path, body).map_err(|source| CliError::Io { path, source })?;
        self.files.push(name);
        Ok(())
    }

    fn tables(
        &mut self,
        stem: &str,
        title: &str,
        rows: &[(String, &BacktestResult)],
        log_scale: bool,
    ) -> Result<(), CliError> {
        self.put(format!("{stem}_metrics.csv"), &metrics_table(rows))?;
        self.put(format!("{stem}_equity.csv"), &equity_table(rows))?;
        let lines: Vec<Line> = rows
            .iter()
            .map(|(label, r)| Line {
                label: label.clone(),
                dates: &r.dates,
                values: &r.equity,
            })
            .collect();
        self.put(
            format!("{stem}_equity.svg"),
            &equity_chart(title, &lines, log_scale),
        )
    }
}

fn strategy_rows(asset: &AssetRun, k: usize) -> Vec<(String, &BacktestResult)> {
    asset
        .methods
        .iter()
        .filter_map(|m| {
            m.outcome
                .as_ref()
                .ok()
                .map(|r| (m.method.label(), &r.strategies[k]))
        })
        .collect()
}

fn forecast_table(asset: &AssetRun) -> String {
    let mut out = String::from(FORECAST_HEADER);
    out.push('\n');
    for m in &asset.methods {
        let Some(walk) = m.outcome.as_ref().ok().and_then(|r| r.walk.as_ref()) else {
            continue;
        };
        let label = m.method.label();
        for f in walk.forecasts() {
            let _ = writeln!(out, "{},{label},{:e},{:e}", f.date, f.forecast, f.actual);
        }
    }
    out
}

#[derive(Debug, Serialize)]
pub struct WindowRecord {
    pub index: usize,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
    pub chosen: usize,
    pub mean_validation_rmse: Option<f64>,
    pub elapsed_ms: u128,
}

#[derive(Debug, Serialize)]
pub struct MethodRecord {
    pub method: String,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub elapsed_ms: u128,
    pub windows: Vec<WindowRecord>,
}

#[derive(Debug, Serialize)]
pub struct AssetRecord {
    pub name: String,
    pub data: String,
    pub data_sha256: String,
    pub windows: usize,
    pub out_of_sample_days: usize,
    pub elapsed_ms: u128,
    pub methods: Vec<MethodRecord>,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub seed: u64,
    pub versions: BTreeMap<&'static str, &'static str>,
    pub elapsed_ms: u128,
    pub assets: Vec<AssetRecord>,
    pub failures: usize,
    /// Every file written to the output directory, this manifest included.
    pub files: Vec<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Digest of the effective configuration (after command-line overrides),
/// ignoring where the reports go.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut cfg = cfg.clone();
    cfg.output_dir = PathBuf::new();
    let canonical = serde_json::to_string(&cfg).expect("config serialises");
    sha256_hex(canonical.as_bytes())
}

fn asset_record(asset: &AssetRun) -> AssetRecord {
    let data_sha256 = std::fs::read(&asset.config.data)
        .map(|b| sha256_hex(&b))
        .unwrap_or_default();
    let methods = asset
        .methods
        .iter()
        .map(|m| {
            let windows = m
                .outcome
                .as_ref()
                .ok()
                .and_then(|r| r.walk.as_ref())
                .map(|w| {
                    w.windows
                        .iter()
                        .map(|w| WindowRecord {
                            index: w.index,
                            test_start: w.split.test.start,
                            test_end: w.split.test.end,
                            chosen: w.chosen,
                            mean_validation_rmse: w
                                .report
                                .as_ref()
                                .and_then(|r| r.scores[r.chosen].mean_rmse),
                            elapsed_ms: w.elapsed.as_millis(),
                        })
                        .collect()
                })
                .unwrap_or_default();
            MethodRecord {
                method: m.method.label(),
                status: if m.outcome.is_ok() { "ok" } else { "failed" },
                error: m.outcome.as_ref().err().cloned(),
                elapsed_ms: m.elapsed.as_millis(),
                windows,
            }
        })
        .collect();
    AssetRecord {
        name: asset.config.name.clone(),
        data: asset.config.data.display().to_string(),
        data_sha256,
        windows: asset.window_count,
        out_of_sample_days: asset.oos_days,
        elapsed_ms: asset.elapsed.as_millis(),
        methods,
    }
}

fn strategy_label(s: StrategyName) -> &'static str {
    s.mode().label()
}

/// Writes every table, plot and the manifest into `dir`.
pub fn emit_reports(
    cfg: &ExperimentConfig,
    run: &ExperimentRun,
    dir: &Path,
) -> Result<RunManifest, CliError> {
    if run.assets.iter().all(|a| a.methods.is_empty()) {
        return Err(CliError::Config {
            origin: "methods".into(),
            message: "nothing to report: the method list is empty".into(),
        });
    }
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut w = Writer {
        dir: dir.to_path_buf(),
        files: Vec::new(),
    };
    for asset in &run.assets {
        let name = &asset.config.name;
        for (k, s) in cfg.strategies.iter().enumerate() {
            let stem = format!("{name}_{}", strategy_label(*s));
            let rows = strategy_rows(asset, k);
            w.tables(
                &stem,
                &format!("{name} {}", strategy_label(*s)),
                &rows,
                cfg.log_scale,
            )?;
        }
        if asset.methods.iter().any(|m| m.method != Method::BuyAndHold) {
            w.put(format!("{name}_forecasts.csv"), &forecast_table(asset))?;
        }
    }

    if let [a, b] = run.assets.as_slice() {
        for (k, s) in cfg.strategies.iter().enumerate() {
            let left = strategy_rows(a, k);
            let right: BTreeMap<String, &BacktestResult> =
                strategy_rows(b, k).into_iter().collect();
            let combined: Vec<(String, BacktestResult)> = left
                .iter()
                .filter_map(|(label, ra)| {
                    let rb = right.get(label)?;
                    portfolio(ra, rb, 365.0).ok().map(|p| (label.clone(), p))
                })
                .collect();
            let rows: Vec<(String, &BacktestResult)> =
                combined.iter().map(|(l, r)| (l.clone(), r)).collect();
            let stem = format!("portfolio_{}", strategy_label(*s));
            w.tables(
                &stem,
                &format!("portfolio {}", strategy_label(*s)),
                &rows,
                cfg.log_scale,
            )?;
        }
    }

    let mut files = w.files.clone();
    files.push("manifest.json".into());
    files.sort();
    let versions = BTreeMap::from([
        ("hybridcast", hybridcast::VERSION),
        ("hybridcast-cli", env!("CARGO_PKG_VERSION")),
    ]);
    let manifest = RunManifest {
        config_sha256: config_hash(cfg),
        seed: cfg.seed,
        versions,
        elapsed_ms: run.elapsed.as_millis(),
        assets: run.assets.iter().map(asset_record).collect(),
        failures: run.failure_count(),
        files,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    w.put("manifest.json".into(), &json)?;
    Ok(manifest)
}
