//! Versioned TOML run configuration. Relative paths resolve against the
//! config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentConfig, HttpConfig};
use crate::backtest::StrategyConfig;
use crate::loops::LoopConfig;
use crate::panel::{ColumnSchema, DateInterval, SplitSpec};

pub const CONFIG_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("config schema_version {found} is not supported (expected {expected})")]
    Version { found: u64, expected: u64 },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub panel: PathBuf,
    pub library: PathBuf,
    #[serde(default)]
    pub columns: ColumnSchema,
    #[serde(default = "one")]
    pub min_days: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train: String,
    pub validation: String,
    pub test: String,
}

impl SplitConfig {
    pub fn spec(&self) -> Result<SplitSpec, ConfigError> {
        let p = |s: &str| DateInterval::parse(s).map_err(|e| ConfigError::Invalid(e.to_string()));
        let spec = SplitSpec { train: p(&self.train)?, validation: p(&self.validation)?, test: p(&self.test)? };
        spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Scripted,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
    #[serde(default)]
    pub http: HttpConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u64,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub splits: SplitConfig,
    #[serde(default)]
    pub strategy: StrategyConfig,
    #[serde(default, rename = "loop")]
    pub loops: LoopConfig,
    #[serde(default)]
    pub agent: AgentConfig,
    pub backend: BackendConfig,
}

fn one() -> usize {
    1
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, path_label: &str) -> Result<Self, ConfigError> {
        let raw: toml::Value =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: path_label.into(), message: e.to_string() })?;
        match raw.get("schema_version").and_then(toml::Value::as_integer) {
            Some(v) if v as u64 == CONFIG_VERSION => {}
            Some(v) => return Err(ConfigError::Version { found: v as u64, expected: CONFIG_VERSION }),
            None => return Err(ConfigError::Parse { path: path_label.into(), message: "missing schema_version".into() }),
        }
        raw.try_into().map_err(|e: toml::de::Error| ConfigError::Parse { path: path_label.into(), message: e.to_string() })
    }

    /// Reads, resolves relative paths and validates.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let label = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read { path: label.clone(), message: e.to_string() })?;
        let mut cfg = RunConfig::from_toml(&text, &label)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.output_dir = resolve(base, &cfg.output_dir);
        cfg.data.panel = resolve(base, &cfg.data.panel);
        cfg.data.library = resolve(base, &cfg.data.library);
        if let Some(f) = &cfg.backend.fixtures {
            cfg.backend.fixtures = Some(resolve(base, f));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, p) in [("data.panel", &self.data.panel), ("data.library", &self.data.library)] {
            if !p.exists() {
                return Err(ConfigError::Invalid(format!("{name} {} does not exist", p.display())));
            }
        }
        match (self.backend.kind, &self.backend.fixtures) {
            (BackendKind::Scripted, None) => return Err(ConfigError::Invalid("scripted backend needs backend.fixtures".into())),
            (BackendKind::Scripted, Some(f)) if !f.exists() => {
                return Err(ConfigError::Invalid(format!("backend.fixtures {} does not exist", f.display())))
            }
            _ => {}
        }
        self.splits.spec()?;
        self.strategy.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.loops.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
