use std::path::{Path, PathBuf};

use cig_core::data::SyntheticConfig;
use cig_core::eval::EvalConfig;
use cig_core::model::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::heatmap::HeatmapSpec;
use crate::CliError;

/// Environment variable overriding the worker thread count.
pub const THREADS_ENV: &str = "CIG_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory holding `manifest.json` and the bag files.
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    /// Root for reports, attributions and heatmaps.
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: "data".into(),
            checkpoint: "model.ckpt".into(),
            output: "out".into(),
        }
    }
}

/// Everything a command needs, loaded from one JSON file.
///
/// Missing sections take their defaults, so `{}` is a complete config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub synth: SyntheticConfig,
    /// Architecture; the narrow desk model sized to the dataset when absent.
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub heatmap: HeatmapSpec,
    pub axiom_seed: u64,
    /// Worker threads; all available cores when absent.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            synth: SyntheticConfig::default(),
            model: None,
            train: TrainConfig {
                seed: 11,
                ..Default::default()
            },
            eval: EvalConfig::default(),
            heatmap: HeatmapSpec::default(),
            axiom_seed: 11,
            threads: None,
        }
    }
}

fn scoped(section: &str, err: cig_core::Error) -> CliError {
    match err {
        cig_core::Error::Parameter { name, reason } => CliError::Config {
            field: format!("{}.{}", section, name),
            reason,
        },
        other => CliError::Run(other),
    }
}

impl RunConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config {
                field: if path == "." { "<root>".into() } else { path },
                reason: e.into_inner().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Config {
            field: "--config".into(),
            reason: format!("{}: {}", path.display(), e),
        })?;
        Self::from_json(&bytes)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.synth.validate().map_err(|e| scoped("synth", e))?;
        self.train.validate().map_err(|e| scoped("train", e))?;
        if let Some(m) = &self.model {
            m.validate().map_err(|e| scoped("model", e))?;
        }
        self.eval.validate().map_err(|e| scoped("eval", e))?;
        self.heatmap.validate().map_err(|e| scoped("heatmap", e))?;
        if self.threads == Some(0) {
            return Err(CliError::Config {
                field: "threads".into(),
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// Thread count after applying [`THREADS_ENV`].
    pub fn resolved_threads(&self, env: Option<&str>) -> Result<usize, CliError> {
        if let Some(raw) = env {
            return match raw.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(CliError::Config {
                    field: THREADS_ENV.into(),
                    reason: format!("expected a positive integer, got {:?}", raw),
                }),
            };
        }
        Ok(self
            .threads
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        assert_eq!(RunConfig::from_json(b"{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_method_names_the_field() {
        let err = RunConfig::from_json(br#"{"eval": {"methods": ["cig", "smoothgrad"]}}"#).unwrap_err();
        match err {
            CliError::Config { field, reason } => {
                assert_eq!(field, "eval.methods[1]");
                assert!(reason.contains("smoothgrad"), "{}", reason);
            }
            other => panic!("{:?}", other),
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RunConfig::from_json(br#"{"eval": {"stepz": 3}}"#).unwrap_err();
        assert!(matches!(err, CliError::Config { ref reason, .. } if reason.contains("stepz")));
    }

    #[test]
    fn zero_steps_fails_validation() {
        let mut cfg = RunConfig::default();
        cfg.eval.steps = 0;
        match cfg.validate().unwrap_err() {
            CliError::Config { field, .. } => assert_eq!(field, "eval.steps"),
            other => panic!("{:?}", other),
        }
    }

    #[test]
    fn thread_env_overrides() {
        let cfg = RunConfig {
            threads: Some(3),
            ..Default::default()
        };
        assert_eq!(cfg.resolved_threads(None).unwrap(), 3);
        assert_eq!(cfg.resolved_threads(Some("5")).unwrap(), 5);
        assert!(cfg.resolved_threads(Some("zero")).is_err());
    }
}
