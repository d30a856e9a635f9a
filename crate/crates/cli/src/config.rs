//! Experiment configuration read from a TOML file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use hybridcast::backtest::StrategyMode;
use hybridcast::hybrid::Method;
use hybridcast::pipeline::ModelSettings;
use hybridcast::timeseries::CsvSpec;
use hybridcast::validation::WindowPlan;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Sp500,
    Bitcoin,
    /// Window geometry given in the asset's `plan` table.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetConfig {
    pub name: String,
    /// Price file; relative paths are resolved against the config file.
    pub data: PathBuf,
    pub preset: Preset,
    #[serde(default)]
    pub plan: Option<WindowPlan>,
    /// Proportional cost per unit of position change, e.g. 0.00005 for 0.005%.
    pub tc: f64,
    pub trading_days: f64,
    #[serde(default = "default_date_column")]
    pub date_column: String,
    #[serde(default = "default_close_column")]
    pub close_column: String,
    #[serde(default = "default_date_format")]
    pub date_format: String,
}

fn default_date_column() -> String {
    "date".into()
}

fn default_close_column() -> String {
    "close".into()
}

fn default_date_format() -> String {
    "%Y-%m-%d".into()
}

impl AssetConfig {
    pub fn window_plan(&self) -> Result<WindowPlan, String> {
        match (self.preset, &self.plan) {
            (Preset::Sp500, None) => Ok(WindowPlan::sp500()),
            (Preset::Bitcoin, None) => Ok(WindowPlan::bitcoin()),
            (Preset::Custom, Some(p)) => Ok(p.clone()),
            (Preset::Custom, None) => Err("preset \"custom\" needs a [asset.plan] table".into()),
            (_, Some(_)) => {
                Err("a [asset.plan] table is only allowed with preset \"custom\"".into())
            }
        }
    }

    pub fn csv_spec(&self) -> CsvSpec {
        CsvSpec {
            date_column: self.date_column.clone(),
            close_column: self.close_column.clone(),
            date_format: self.date_format.clone(),
            ..Default::default()
        }
    }
}

fn default_methods() -> Vec<String> {
    Method::all().iter().map(Method::label).collect()
}

fn default_strategies() -> Vec<StrategyName> {
    vec![StrategyName::LongShort, StrategyName::LongOnly]
}

fn default_output_dir() -> PathBuf {
    "results".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    LongShort,
    LongOnly,
}

impl StrategyName {
    pub fn mode(self) -> StrategyMode {
        match self {
            StrategyName::LongShort => StrategyMode::LongShort,
            StrategyName::LongOnly => StrategyMode::LongOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<StrategyName>,
    /// Logarithmic equity axis in the SVG plots.
    #[serde(default)]
    pub log_scale: bool,
    #[serde(rename = "asset")]
    pub assets: Vec<AssetConfig>,
    #[serde(default)]
    pub models: ModelSettings,
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config {
            origin: origin.into(),
            message: e.to_string(),
        })?;
        cfg.check().map_err(|message| CliError::Config {
            origin: origin.into(),
            message,
        })?;
        Ok(cfg)
    }

    /// Reads the file and resolves relative data paths against its folder.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        for a in &mut cfg.assets {
            if a.data.is_relative() {
                a.data = base.join(&a.data);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    /// Method labels in configured order.
    pub fn parsed_methods(&self) -> Result<Vec<Method>, String> {
        self.methods
            .iter()
            .enumerate()
            .map(|(i, m)| {
                m.parse::<Method>()
                    .map_err(|e| format!("methods[{i}]: {e}"))
            })
            .collect()
    }

    fn check(&self) -> Result<(), String> {
        if self.methods.is_empty() {
            return Err("methods: the method list is empty".into());
        }
        let methods = self.parsed_methods()?;
        let mut seen = BTreeSet::new();
        for (i, m) in methods.iter().enumerate() {
            if !seen.insert(m.label()) {
                return Err(format!("methods[{i}]: {} listed twice", m.label()));
            }
        }
        if self.strategies.is_empty() {
            return Err("strategies: the strategy list is empty".into());
        }
        if self.assets.is_empty() {
            return Err("asset: at least one [[asset]] table is required".into());
        }
        let mut names = BTreeSet::new();
        for (i, a) in self.assets.iter().enumerate() {
            let at = |msg: String| format!("asset[{i}] ({}): {msg}", a.name);
            let valid_name = !a.name.is_empty()
                && a.name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !valid_name {
                return Err(at(
                    "name must be non-empty ASCII letters, digits, '-' or '_'".into(),
                ));
            }
            if a.name == "portfolio" {
                return Err(at("name \"portfolio\" is reserved".into()));
            }
            if !names.insert(a.name.clone()) {
                return Err(at("duplicate asset name".into()));
            }
            if !(a.tc >= 0.0 && a.tc.is_finite()) {
                return Err(at(format!(
                    "tc must be a finite non-negative fraction, got {}",
                    a.tc
                )));
            }
            if !(a.trading_days > 0.0 && a.trading_days.is_finite()) {
                return Err(at(format!(
                    "trading_days must be positive, got {}",
                    a.trading_days
                )));
            }
            a.window_plan().map_err(at)?;
        }
        let m = &self.models;
        if m.lags.is_empty() || m.lags.contains(&0) {
            return Err("models.lags: need at least one positive lag count".into());
        }
        if m.svr.c.is_empty() || m.svr.epsilon.is_empty() || m.svr.kernel.is_empty() {
            return Err("models.svr: every grid axis needs at least one value".into());
        }
        if m.gbt.n_trees.is_empty() || m.gbt.max_depth.is_empty() || m.gbt.learning_rate.is_empty()
        {
            return Err("models.gbt: every grid axis needs at least one value".into());
        }
        if m.lstm.hidden_size.is_empty() || m.lstm.sequence_length.is_empty() {
            return Err("models.lstm: every grid axis needs at least one value".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
methods = ["Buy&Hold", "arima", "SVM-ARFIMA (2)"]

[[asset]]
name = "spx"
data = "spx.csv"
preset = "sp500"
tc = 0.00005
trading_days = 252
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL, "inline").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.strategies.len(), 2);
        assert_eq!(cfg.models, ModelSettings::default());
        assert_eq!(cfg.parsed_methods().unwrap().len(), 3);
        assert_eq!(cfg.assets[0].window_plan().unwrap(), WindowPlan::sp500());
    }

    #[test]
    fn all_methods_by_default() {
        let text = MINIMAL.replace(
            "methods = [\"Buy&Hold\", \"arima\", \"SVM-ARFIMA (2)\"]",
            "",
        );
        let cfg = ExperimentConfig::parse(&text, "inline").unwrap();
        assert_eq!(cfg.parsed_methods().unwrap(), Method::all());
    }

    #[test]
    fn diagnostics_name_the_field() {
        let err = |text: &str| {
            ExperimentConfig::parse(text, "inline")
                .unwrap_err()
                .to_string()
        };
        assert!(err(&MINIMAL.replace("\"arima\"", "\"ARMA\"")).contains("methods[1]"));
        assert!(err(&MINIMAL.replace("tc = 0.00005", "tc = -1.0")).contains("asset[0] (spx): tc"));
        assert!(err(&MINIMAL.replace("sp500\"", "nasdaq\"")).contains("line"));
        assert!(err(&MINIMAL.replace("seed = 7", "seed = 7\nsed = 1")).contains("sed"));
        let empty = MINIMAL.replace("[\"Buy&Hold\", \"arima\", \"SVM-ARFIMA (2)\"]", "[]");
        assert!(err(&empty).contains("empty"));
        assert!(
            err(&MINIMAL.replace("preset = \"sp500\"", "preset = \"custom\"")).contains("plan")
        );
    }

    #[test]
    fn custom_plan_round_trips() {
        let text = MINIMAL.replace(
            "preset = \"sp500\"",
            "preset = \"custom\"\nplan = { start = \"2010-01-01\", end = \"2015-12-31\", train_months = 12, val_months = [2, 4, 6], test_months = 6, step_months = 6 }",
        );
        let cfg = ExperimentConfig::parse(&text, "inline").unwrap();
        let plan = cfg.assets[0].window_plan().unwrap();
        assert_eq!(plan.train_months, 12);
        assert_eq!(plan.val_months, [2, 4, 6]);
    }
}
