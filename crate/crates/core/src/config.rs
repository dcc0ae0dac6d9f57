//! Run configuration: a flat `key = value` file with a schema version.
//!
//! ```text
//! schema_version = 1
//! preset = large-tick
//! days = 252
//! seed = 7
//! out = runs/large
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Only the data and
//! output directories may be overridden from the environment
//! (`LOBQI_DATA_DIR`, `LOBQI_OUT_DIR`).

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::evaluation::ModelId;
use crate::ingest::SessionWindow;
use crate::sampling::SamplingMode;
use crate::simulator::regime_preset;
use crate::time::Nanos;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const ENV_DATA_DIR: &str = "LOBQI_DATA_DIR";
pub const ENV_OUT_DIR: &str = "LOBQI_OUT_DIR";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("unsupported schema_version {0} (expected {CONFIG_SCHEMA_VERSION})")]
    SchemaVersion(u32),
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    /// Simulated days from a named regime.
    Preset(String),
    /// LOBSTER message files (with optional orderbook files) in a directory.
    Lobster(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub schema_version: u32,
    pub source: Source,
    /// Simulated days; ignored for LOBSTER input.
    pub days: usize,
    /// Raw price units per tick for LOBSTER input.
    pub tick_size: i64,
    pub window: SessionWindow,
    pub subsample_n: usize,
    pub train_fraction: f64,
    pub mode: SamplingMode,
    pub models: Vec<ModelId>,
    pub alpha_candidates: Vec<f64>,
    pub grid_points: usize,
    pub cv_folds: usize,
    pub histogram_bins: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            source: Source::Preset("large-tick".into()),
            days: 252,
            tick_size: 100,
            window: SessionWindow::default(),
            subsample_n: 100,
            train_fraction: 0.8,
            mode: SamplingMode::Uniform,
            models: vec![ModelId::Logistic, ModelId::Local, ModelId::Null],
            alpha_candidates: vec![0.5, 0.65, 0.8],
            grid_points: crate::inference::DEFAULT_GRID_POINTS,
            cv_folds: 5,
            histogram_bins: crate::evaluation::DEFAULT_HISTOGRAM_BINS,
            seed: 7,
            out: PathBuf::from("out"),
        }
    }
}

const KEYS: &[&str] = &[
    "schema_version",
    "preset",
    "data_dir",
    "days",
    "tick_size",
    "session_open",
    "session_close",
    "subsample_n",
    "train_fraction",
    "mode",
    "models",
    "alpha_candidates",
    "grid_points",
    "cv_folds",
    "histogram_bins",
    "seed",
    "out",
];

fn invalid(key: &str, value: &str, reason: impl ToString) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.into(),
        value: value.into(),
        reason: reason.to_string(),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| invalid(key, value, e))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e: T::Err| invalid(key, value, e)))
        .collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        let mut version = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey { line, key: key.into() });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey { line, key: key.into() });
            }
            if key == "schema_version" {
                version = Some(parse_num(key, value)?);
            } else {
                cfg.set(key, value)?;
            }
        }
        if seen.contains("preset") && seen.contains("data_dir") {
            return Err(ConfigError::Invalid("give either preset or data_dir, not both".into()));
        }
        match version {
            Some(CONFIG_SCHEMA_VERSION) => {}
            Some(v) => return Err(ConfigError::SchemaVersion(v)),
            None => return Err(ConfigError::Invalid("missing schema_version".into())),
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "preset" => self.source = Source::Preset(value.into()),
            "data_dir" => self.source = Source::Lobster(value.into()),
            "days" => self.days = parse_num(key, value)?,
            "tick_size" => self.tick_size = parse_num(key, value)?,
            "session_open" => self.window.open = parse_num::<Nanos>(key, value)?,
            "session_close" => self.window.close = parse_num::<Nanos>(key, value)?,
            "subsample_n" => self.subsample_n = parse_num(key, value)?,
            "train_fraction" => self.train_fraction = parse_num(key, value)?,
            "mode" => self.mode = value.parse().map_err(|e: String| invalid(key, value, e))?,
            "models" => self.models = parse_list(key, value)?,
            "alpha_candidates" => self.alpha_candidates = parse_list(key, value)?,
            "grid_points" => self.grid_points = parse_num(key, value)?,
            "cv_folds" => self.cv_folds = parse_num(key, value)?,
            "histogram_bins" => self.histogram_bins = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "out" => self.out = value.into(),
            "schema_version" => {
                let v: u32 = parse_num(key, value)?;
                if v != CONFIG_SCHEMA_VERSION {
                    return Err(ConfigError::SchemaVersion(v));
                }
            }
            other => {
                return Err(ConfigError::UnknownKey {
                    line: 0,
                    key: other.into(),
                })
            }
        }
        Ok(())
    }

    /// Applies the data/output directory overrides.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(dir) = get(ENV_DATA_DIR).filter(|s| !s.is_empty()) {
            self.source = Source::Lobster(dir.into());
        }
        if let Some(dir) = get(ENV_OUT_DIR).filter(|s| !s.is_empty()) {
            self.out = dir.into();
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError::Invalid(m));
        match &self.source {
            Source::Preset(name) => {
                regime_preset(name).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                if self.days == 0 {
                    return fail("days must be at least 1".into());
                }
            }
            Source::Lobster(_) => {
                if self.tick_size < 1 {
                    return fail("tick_size must be positive".into());
                }
            }
        }
        if self.window.open >= self.window.close {
            return fail("session_open must precede session_close".into());
        }
        if self.subsample_n < 1 {
            return fail("subsample_n must be at least 1".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return fail(format!("train_fraction {} is outside (0, 1)", self.train_fraction));
        }
        if self.models.is_empty() {
            return fail("models must name at least one of logistic, local, null".into());
        }
        if self.models.contains(&ModelId::Local) {
            if self.alpha_candidates.is_empty() {
                return fail("alpha_candidates must be non-empty".into());
            }
            if let Some(a) = self.alpha_candidates.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
                return fail(format!("alpha {a} is outside (0, 1]"));
            }
            if self.grid_points < 2 {
                return fail("grid_points must be at least 2".into());
            }
            if self.cv_folds < 2 {
                return fail("cv_folds must be at least 2".into());
            }
        }
        if self.histogram_bins < 2 {
            return fail("histogram_bins must be at least 2".into());
        }
        Ok(())
    }

    /// Canonical text form; parsing it reproduces this config.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let join = |xs: Vec<String>| xs.join(",");
        let _ = writeln!(s, "schema_version = {}", self.schema_version);
        match &self.source {
            Source::Preset(name) => {
                let _ = writeln!(s, "preset = {name}");
            }
            Source::Lobster(dir) => {
                let _ = writeln!(s, "data_dir = {}", dir.display());
            }
        }
        let _ = writeln!(s, "days = {}", self.days);
        let _ = writeln!(s, "tick_size = {}", self.tick_size);
        let _ = writeln!(s, "session_open = {}", self.window.open);
        let _ = writeln!(s, "session_close = {}", self.window.close);
        let _ = writeln!(s, "subsample_n = {}", self.subsample_n);
        let _ = writeln!(s, "train_fraction = {}", self.train_fraction);
        let _ = writeln!(s, "mode = {}", self.mode);
        let _ = writeln!(
            s,
            "models = {}",
            join(self.models.iter().map(|m| m.as_str().to_string()).collect())
        );
        let _ = writeln!(
            s,
            "alpha_candidates = {}",
            join(self.alpha_candidates.iter().map(f64::to_string).collect())
        );
        let _ = writeln!(s, "grid_points = {}", self.grid_points);
        let _ = writeln!(s, "cv_folds = {}", self.cv_folds);
        let _ = writeln!(s, "histogram_bins = {}", self.histogram_bins);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out = {}", self.out.display());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let cfg = RunConfig {
            days: 3,
            seed: 11,
            alpha_candidates: vec![0.65],
            ..Default::default()
        };
        assert_eq!(RunConfig::parse(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn parse_errors() {
        assert_eq!(
            RunConfig::parse("seed = 1"),
            Err(ConfigError::Invalid("missing schema_version".into()))
        );
        assert_eq!(
            RunConfig::parse("schema_version = 2"),
            Err(ConfigError::SchemaVersion(2))
        );
        assert_eq!(
            RunConfig::parse("schema_version = 1\nbogus"),
            Err(ConfigError::Syntax { line: 2 })
        );
        assert!(matches!(
            RunConfig::parse("schema_version = 1\ncolour = red"),
            Err(ConfigError::UnknownKey { line: 2, .. })
        ));
        assert!(matches!(
            RunConfig::parse("schema_version = 1\nseed = 1\nseed = 2"),
            Err(ConfigError::DuplicateKey { line: 3, .. })
        ));
        assert!(matches!(
            RunConfig::parse("schema_version = 1\nmode = sometimes"),
            Err(ConfigError::InvalidValue { .. })
        ));
    }

    #[test]
    fn split_fraction_out_of_range() {
        let cfg = RunConfig::parse("schema_version = 1\ntrain_fraction = 1.2").unwrap();
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(m)) if m.contains("train_fraction")));
    }

    #[test]
    fn missing_data_dir_is_not_a_config_error() {
        let cfg = RunConfig::parse("schema_version = 1\ndata_dir = /nonexistent/lobster").unwrap();
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn env_overrides() {
        let mut cfg = RunConfig::default();
        cfg.apply_env(|k| (k == ENV_OUT_DIR).then(|| "elsewhere".to_string()));
        assert_eq!(cfg.out, PathBuf::from("elsewhere"));
        assert_eq!(cfg.source, Source::Preset("large-tick".into()));
        cfg.apply_env(|k| (k == ENV_DATA_DIR).then(|| "/data".to_string()));
        assert_eq!(cfg.source, Source::Lobster("/data".into()));
    }
}
