//! Run configuration: a single JSON file checked into the run directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::backend::{
    CachedBackend, HttpBackend, HttpConfig, ScriptedBackend, SyntheticBackend, SyntheticOracleConfig,
};
use crate::corpus::{DatasetKind, SourceFormat};
use crate::langspace::LanguageCode;
use crate::strategies::StrategySpec;

pub const CACHE_DIR_ENV: &str = "PA_CACHE_DIR";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub dataset: DatasetKind,
    pub format: SourceFormat,
    pub language: LanguageCode,
    pub path: PathBuf,
}

/// Which model a run talks to.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    /// OpenAI-compatible HTTP endpoint; endpoint/key fall back to
    /// `PA_ENDPOINT` / `PA_API_KEY`.
    Http {
        model_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        endpoint: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        api_key: Option<String>,
    },
    Scripted {
        script_path: PathBuf,
    },
    Synthetic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        oracle_path: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        oracle: Option<SyntheticOracleConfig>,
    },
}

impl BackendSpec {
    /// Builds the backend and wraps it in the persistent cache.
    pub fn build(
        &self,
        cache_dir: &Path,
        concurrency: usize,
        base_dir: &Path,
    ) -> Result<Arc<CachedBackend>, HarnessError> {
        let inner: Box<dyn crate::backend::Backend> = match self {
            BackendSpec::Http {
                model_id,
                endpoint,
                api_key,
            } => {
                let config = match endpoint {
                    Some(endpoint) => HttpConfig {
                        endpoint: endpoint.clone(),
                        model_id: model_id.clone(),
                        api_key: api_key
                            .clone()
                            .or_else(|| std::env::var(crate::backend::API_KEY_ENV).ok()),
                        max_attempts: 5,
                        initial_backoff_ms: 1000,
                        timeout_secs: 120,
                    },
                    None => HttpConfig::from_env(model_id.clone())
                        .map_err(|e| HarnessError::Config(e.to_string()))?,
                };
                Box::new(HttpBackend::new(config))
            }
            BackendSpec::Scripted { script_path } => Box::new(
                ScriptedBackend::from_file(&resolve(base_dir, script_path))
                    .map_err(|e| HarnessError::Config(e.to_string()))?,
            ),
            BackendSpec::Synthetic { oracle_path, oracle } => {
                let config = match (oracle, oracle_path) {
                    (Some(inline), _) => {
                        inline.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
                        inline.clone()
                    }
                    (None, Some(path)) => SyntheticOracleConfig::from_file(&resolve(base_dir, path))
                        .map_err(|e| HarnessError::Config(e.to_string()))?,
                    (None, None) => SyntheticOracleConfig::default(),
                };
                Box::new(SyntheticBackend::new(config))
            }
        };
        CachedBackend::open(inner, cache_dir, concurrency)
            .map(Arc::new)
            .map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn model_label(&self) -> String {
        match self {
            BackendSpec::Http { model_id, .. } => model_id.clone(),
            BackendSpec::Scripted { script_path } => script_path
                .file_stem()
                .map(|s| format!("scripted-{}", s.to_string_lossy()))
                .unwrap_or_else(|| "scripted".to_string()),
            BackendSpec::Synthetic { oracle, .. } => oracle
                .as_ref()
                .map(|o| o.model_id.clone())
                .unwrap_or_else(|| "synthetic-oracle".to_string()),
        }
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub run_id: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    pub datasets: Vec<DatasetEntry>,
    /// Restricts execution to these languages when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub languages: Option<Vec<LanguageCode>>,
    pub strategies: Vec<StrategySpec>,
    pub answerer: BackendSpec,
    /// Feedback generator; defaults to the answerer (Self configuration).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<BackendSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<BackendSpec>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts_dir: Option<PathBuf>,
}

fn default_concurrency() -> usize {
    4
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("read {}: {e}", path.display())))?;
        let config: Self = serde_json::from_str(&content)
            .map_err(|e| HarnessError::Config(format!("parse {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.run_id.is_empty() {
            return Err(HarnessError::Config("run_id must be non-empty".into()));
        }
        if self
            .run_id
            .chars()
            .any(|c| !(c.is_ascii_alphanumeric() || c == '-' || c == '_'))
        {
            return Err(HarnessError::Config(format!(
                "run_id {:?} may only contain [A-Za-z0-9_-]",
                self.run_id
            )));
        }
        if self.datasets.is_empty() {
            return Err(HarnessError::Config("at least one dataset entry required".into()));
        }
        if self.strategies.is_empty() {
            return Err(HarnessError::Config("at least one strategy required".into()));
        }
        for spec in &self.strategies {
            crate::strategies::Strategy::parse(spec)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if let Some(languages) = &self.languages {
            for language in languages {
                if !self.datasets.iter().any(|d| d.language == *language) {
                    return Err(HarnessError::Config(format!(
                        "language {language} listed but no dataset entry provides it"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Cache directory: explicit config, `PA_CACHE_DIR`, or `cache/`.
    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .or_else(|| std::env::var(CACHE_DIR_ENV).ok().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("cache"))
    }

    /// Dataset entries after the optional language filter.
    pub fn active_datasets(&self) -> Vec<&DatasetEntry> {
        self.datasets
            .iter()
            .filter(|entry| {
                self.languages
                    .as_ref()
                    .is_none_or(|langs| langs.contains(&entry.language))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> serde_json::Value {
        serde_json::json!({
            "run_id": "demo-1",
            "datasets": [
                {"dataset": "custom", "format": "canonical", "language": "fr", "path": "fr.jsonl"}
            ],
            "strategies": [{"name": "reflect"}],
            "answerer": {"kind": "synthetic"}
        })
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let config: RunConfig = serde_json::from_value(minimal_json()).unwrap();
        config.validate().unwrap();
        assert_eq!(config.concurrency, 4);
        assert_eq!(config.output_dir, PathBuf::from("runs"));
        assert!(config.feedback.is_none());
    }

    #[test]
    fn bad_strategy_rejected() {
        let mut json = minimal_json();
        json["strategies"] = serde_json::json!([{"name": "nonsense"}]);
        let config: RunConfig = serde_json::from_value(json).unwrap();
        assert!(matches!(config.validate(), Err(HarnessError::Config(_))));
    }

    #[test]
    fn language_filter_must_match_datasets() {
        let mut json = minimal_json();
        json["languages"] = serde_json::json!(["ta"]);
        let config: RunConfig = serde_json::from_value(json).unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn run_id_charset_enforced() {
        let mut json = minimal_json();
        json["run_id"] = serde_json::json!("has spaces");
        let config: RunConfig = serde_json::from_value(json).unwrap();
        assert!(config.validate().is_err());
    }
}
