//! Run manifests: one JSON document describing a scenario, the platform
//! calibration and a scheduler.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::platform::PlatformConfig;
use crate::schedulers::SchedulerConfig;
use crate::workload::ScenarioConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported schema version {found}, expected {SCHEMA_VERSION}")]
    Schema { found: u32 },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub platform: PlatformConfig,
    #[serde(default = "default_scheduler")]
    pub scheduler: SchedulerConfig,
    /// seeds `scenario.seed ..` `scenario.seed + replications`
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_scheduler() -> SchedulerConfig {
    SchedulerConfig::Noah(Default::default())
}

fn one() -> usize {
    1
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            scenario: ScenarioConfig::default(),
            platform: PlatformConfig::default(),
            scheduler: default_scheduler(),
            replications: 1,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema != SCHEMA_VERSION {
            return Err(ConfigError::Schema { found: self.schema });
        }
        if self.replications == 0 {
            return Err(ConfigError::Invalid("replications must be at least 1".into()));
        }
        self.scenario.validate().map_err(ConfigError::Invalid)?;
        self.platform.validate().map_err(ConfigError::Invalid)?;
        self.scheduler.validate().map_err(ConfigError::Invalid)
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.replications as u64).map(|i| self.scenario.seed + i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_manifest_uses_defaults() {
        let c = RunConfig::from_json(r#"{"schema": 1}"#).unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn nested_overrides() {
        let c = RunConfig::from_json(
            r#"{"schema": 1, "scenario": {"lambda_max": 40, "seed": 9},
                "scheduler": {"openwhisk": {"busy_alpha": 8}}, "replications": 3}"#,
        )
        .unwrap();
        assert_eq!(c.scenario.lambda_max, 40.0);
        assert_eq!(c.scenario.num_workers, 10);
        assert_eq!(c.seeds().collect::<Vec<_>>(), vec![9, 10, 11]);
        assert_eq!(c.scheduler.name(), "openwhisk");
    }

    #[test]
    fn rejects_bad_manifests() {
        assert!(matches!(RunConfig::from_json(r#"{"schema": 2}"#), Err(ConfigError::Schema { found: 2 })));
        assert!(matches!(RunConfig::from_json(r#"{}"#), Err(ConfigError::Parse(_))));
        assert!(RunConfig::from_json(r#"{"schema": 1, "colour": "red"}"#).is_err());
        assert!(RunConfig::from_json(r#"{"schema": 1, "scenario": {"cores": 0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"schema": 1, "scheduler": {"noncoop": {"epsilon": -1}}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"schema": 1, "replications": 0}"#).is_err());
    }

    #[test]
    fn round_trips() {
        let c = RunConfig::default();
        let back = RunConfig::from_json(&serde_json::to_string_pretty(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
