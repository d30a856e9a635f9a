//! The `run` command on small synthetic price files.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;

use chrono::{Datelike, NaiveDate};
use hybridcast_cli::report::METRICS_HEADER;
use hybridcast_cli::{run, RunOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn write_prices(path: &Path, seed: u64, weekends: bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = NaiveDate::from_ymd_opt(2009, 12, 1).unwrap();
    let end = NaiveDate::from_ymd_opt(2014, 12, 31).unwrap();
    let mut price = 100.0;
    let mut prev = 0.0;
    let mut text = String::from("date,close\n");
    for d in start.iter_days().take_while(|d| *d <= end) {
        if !weekends && d.weekday().num_days_from_monday() >= 5 {
            continue;
        }
        let shock: f64 = rng.random_range(-0.02..0.02);
        let r = 0.0003 + 0.2 * prev + shock;
        prev = r;
        price *= f64::exp(r);
        text.push_str(&format!("{d},{price:.6}\n"));
    }
    std::fs::write(path, text).unwrap();
}

const MODELS: &str = r#"
[models]
lags = [3]
orders = { p_max = 1, d_max = 0, q_max = 1 }
arfima = { d_grid = [0.0, 0.2], refine_radius = 0.0, truncation = 50 }
svr = { c = [1.0], epsilon = [0.001], kernel = ["linear", "rbf"] }
gbt = { n_trees = [20], max_depth = [2], learning_rate = [0.1] }
lstm = { hidden_size = [3], sequence_length = [4], epochs = 3 }
"#;

fn asset(name: &str, file: &str, tc: f64, days: u32) -> String {
    format!(
        r#"
[[asset]]
name = "{name}"
data = "{file}"
preset = "custom"
tc = {tc}
trading_days = {days}
plan = {{ start = "2010-01-01", end = "2014-12-31", train_months = 12, val_months = [2, 4, 6], test_months = 6, step_months = 6 }}
"#
    )
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_prices(&dir.path().join("stock.csv"), 1, false);
        write_prices(&dir.path().join("coin.csv"), 2, true);
        Self { dir }
    }

    fn config(&self, name: &str, methods: &[&str], assets: &[String]) -> PathBuf {
        let list: Vec<String> = methods.iter().map(|m| format!("{m:?}")).collect();
        let text = format!(
            "seed = 11\noutput_dir = \"out_{name}\"\nmethods = [{}]\n{}{}",
            list.join(", "),
            assets.concat(),
            MODELS
        );
        let path = self.dir.path().join(format!("{name}.toml"));
        std::fs::write(&path, text).unwrap();
        path
    }

    fn stock(&self) -> String {
        asset("stock", "stock.csv", 0.00005, 252)
    }

    fn coin(&self) -> String {
        asset("coin", "coin.csv", 0.0001, 365)
    }
}

fn listing(dir: &Path) -> BTreeSet<String> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect()
}

#[test]
fn benchmark_only_run_writes_one_row_tables() {
    let fx = Fixture::new();
    let cfg = fx.config("bh", &["Buy&Hold"], &[fx.stock()]);
    let summary = run(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(summary.failures(), 0);
    let table =
        std::fs::read_to_string(summary.out_dir.join("stock_long_short_metrics.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("Buy&Hold,,,"));
    let files = listing(&summary.out_dir);
    let listed: BTreeSet<String> = summary.manifest.files.iter().cloned().collect();
    assert_eq!(files, listed);
    assert!(!files.contains("stock_forecasts.csv"));
    assert_eq!(summary.manifest.assets[0].windows, 7);
}

#[test]
fn identical_runs_write_identical_tables() {
    let fx = Fixture::new();
    let methods = [
        "Buy&Hold",
        "ARIMA",
        "ARFIMA",
        "SVM",
        "XGBoost",
        "LSTM",
        "SVM-ARIMA (1)",
        "XGBoost-ARFIMA (2)",
        "LSTM-ARIMA (2)",
    ];
    let cfg = fx.config("det", &methods, &[fx.stock(), fx.coin()]);
    let out = |n: &str| fx.dir.path().join(n);
    let first = run(
        &cfg,
        &RunOptions {
            out: Some(out("a")),
            jobs: Some(2),
            ..Default::default()
        },
    )
    .unwrap();
    let second = run(
        &cfg,
        &RunOptions {
            out: Some(out("b")),
            jobs: Some(1),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(first.failures(), 0, "{:?}", first.manifest.assets);
    assert_eq!(first.manifest.config_sha256, second.manifest.config_sha256);
    let files = listing(&out("a"));
    assert_eq!(files, listing(&out("b")));
    for f in files
        .iter()
        .filter(|f| f.ends_with(".csv") || f.ends_with(".svg"))
    {
        let a = std::fs::read(out("a").join(f)).unwrap();
        let b = std::fs::read(out("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
    // two assets and two strategies: four asset tables plus two portfolio tables
    let metric_tables: Vec<&String> = files
        .iter()
        .filter(|f| f.ends_with("_metrics.csv"))
        .collect();
    assert_eq!(metric_tables.len(), 6);
    let portfolio =
        std::fs::read_to_string(out("a").join("portfolio_long_only_metrics.csv")).unwrap();
    assert_eq!(portfolio.lines().count(), 1 + methods.len());

    let reseeded = run(
        &cfg,
        &RunOptions {
            out: Some(out("c")),
            seed: Some(12),
            ..Default::default()
        },
    )
    .unwrap();
    assert_ne!(
        reseeded.manifest.config_sha256,
        first.manifest.config_sha256
    );
}

#[test]
fn forecasts_cover_every_test_day() {
    let fx = Fixture::new();
    let cfg = fx.config("cover", &["ARIMA"], &[fx.stock()]);
    let summary = run(&cfg, &RunOptions::default()).unwrap();
    let text = std::fs::read_to_string(summary.out_dir.join("stock_forecasts.csv")).unwrap();
    let first = text.lines().nth(1).unwrap();
    assert!(first.starts_with("2011-07-01,ARIMA,"), "{first}");
    assert_eq!(
        text.lines().count() - 1,
        summary.manifest.assets[0].out_of_sample_days
    );
    let equity =
        std::fs::read_to_string(summary.out_dir.join("stock_long_short_equity.csv")).unwrap();
    assert!(equity
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("2011-06-30,ARIMA,1.0000000000"));
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hybridcast"))
}

#[test]
fn exit_codes_separate_partial_and_fatal_failures() {
    let fx = Fixture::new();
    let ok = fx.config("ok", &["Buy&Hold"], &[fx.stock()]);
    assert_eq!(
        binary()
            .args(["run", "--config"])
            .arg(&ok)
            .status()
            .unwrap()
            .code(),
        Some(0)
    );

    let empty = fx.config("empty", &[], &[fx.stock()]);
    let out = binary()
        .args(["run", "--config"])
        .arg(&empty)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));

    // a lag window longer than the training span makes the learner fail
    let partial = fx.config("partial", &["ARIMA", "SVM"], &[fx.stock()]);
    let text = std::fs::read_to_string(&partial)
        .unwrap()
        .replace("lags = [3]", "lags = [400]");
    std::fs::write(&partial, text).unwrap();
    let out = binary()
        .args(["run", "--config"])
        .arg(&partial)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = std::fs::read_to_string(
        fx.dir
            .path()
            .join("out_partial/stock_long_short_metrics.csv"),
    )
    .unwrap();
    assert_eq!(table.lines().count(), 2);
    assert!(table.contains("\nARIMA,"));

    let missing = fx.config("missing", &["ARIMA"], &[asset("x", "nope.csv", 0.0, 252)]);
    let out = binary()
        .args(["run", "--config"])
        .arg(&missing)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));
}

#[test]
fn describe_prints_return_statistics() {
    let fx = Fixture::new();
    let out = binary()
        .args(["describe", "--data"])
        .arg(fx.dir.path().join("stock.csv"))
        .args(["--from", "2010-01-01", "--to", "2010-12-31"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let count: usize = text
        .lines()
        .find(|l| l.starts_with("count"))
        .unwrap()
        .split_whitespace()
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(count, 261);
    for key in ["mean", "std", "skewness", "kurtosis", "min", "max"] {
        assert!(text.contains(key));
    }
}
