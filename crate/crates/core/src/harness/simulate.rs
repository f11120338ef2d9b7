//! Synthetic end-to-end pipeline validation.
//!
//! Generates a parallel multilingual corpus, runs the full pipeline against
//! the synthetic oracle, and emits the same report formats as a real run.
//! This is the hermetic, desk-scale stand-in for experiments that would
//! otherwise need proprietary models.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{BackendSpec, DatasetEntry, RunConfig};
use super::run::{run, RunOutcome};
use super::HarnessError;
use crate::backend::SyntheticOracleConfig;
use crate::corpus::{DatasetKind, SourceFormat};
use crate::langspace::LanguageCode;
use crate::rng::{derive_seed, SplitMix64};
use crate::strategies::StrategySpec;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateScenario {
    #[serde(default = "default_run_id")]
    pub run_id: String,
    pub languages: Vec<LanguageCode>,
    #[serde(default = "default_items")]
    pub items_per_language: usize,
    pub strategies: Vec<StrategySpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

fn default_run_id() -> String {
    "simulate".to_string()
}

fn default_items() -> usize {
    500
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_concurrency() -> usize {
    4
}

/// `simulate --oracle <file>`: oracle parameters plus the scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateSpec {
    pub oracle: SyntheticOracleConfig,
    pub scenario: SimulateScenario,
}

impl SimulateSpec {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("read {}: {e}", path.display())))?;
        serde_json::from_str(&content)
            .map_err(|e| HarnessError::Config(format!("parse {}: {e}", path.display())))
    }
}

const CHOICE_TEXTS: [&str; 4] = [
    "the first option",
    "the second option",
    "the third option",
    "the fourth option",
];

/// Writes one canonical-format JSONL corpus per language. Item ids and gold
/// labels are shared across languages (parallel questions); question text
/// carries a language marker so prompts differ per language.
fn write_corpus(scenario: &SimulateScenario, dir: &Path) -> Result<Vec<DatasetEntry>, HarnessError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
    let mut entries = Vec::new();
    for language in &scenario.languages {
        let mut lines = String::new();
        for index in 0..scenario.items_per_language {
            let item_id = format!("i{index:05}");
            // gold depends only on (seed, item id), keeping translations parallel
            let mut rng = SplitMix64::new(derive_seed(scenario.seed, &["gold", &item_id]));
            let gold = (b'A' + rng.next_below(4) as u8) as char;
            let row = serde_json::json!({
                "id": item_id,
                "question": format!("[{language}] Synthetic question {item_id}: which option is correct?"),
                "choices": CHOICE_TEXTS,
                "answer": gold.to_string(),
            });
            lines.push_str(&row.to_string());
            lines.push('\n');
        }
        let path = dir.join(format!("{language}.jsonl"));
        std::fs::write(&path, lines)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        entries.push(DatasetEntry {
            dataset: DatasetKind::Custom,
            format: SourceFormat::Canonical,
            language: *language,
            path,
        });
    }
    Ok(entries)
}

/// Runs the full pipeline against the synthetic oracle.
pub fn simulate(
    oracle: &SyntheticOracleConfig,
    scenario: &SimulateScenario,
    base_dir: &Path,
) -> Result<RunOutcome, HarnessError> {
    oracle
        .validate()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    if scenario.languages.is_empty() {
        return Err(HarnessError::Config("scenario needs at least one language".into()));
    }
    if scenario.strategies.is_empty() {
        return Err(HarnessError::Config("scenario needs at least one strategy".into()));
    }
    let run_dir = base_dir.join(&scenario.output_dir).join(&scenario.run_id);
    let datasets = write_corpus(scenario, &run_dir.join("datasets"))?;
    let config = RunConfig {
        run_id: scenario.run_id.clone(),
        seed: scenario.seed,
        concurrency: scenario.concurrency,
        datasets,
        languages: None,
        strategies: scenario.strategies.clone(),
        answerer: BackendSpec::Synthetic {
            oracle_path: None,
            oracle: Some(oracle.clone()),
        },
        feedback: None,
        judge: None,
        output_dir: base_dir.join(&scenario.output_dir),
        cache_dir: Some(
            scenario
                .cache_dir
                .clone()
                .map(|d| base_dir.join(d))
                .unwrap_or_else(|| run_dir.join("cache")),
        ),
        prompts_dir: None,
    };
    run(&config, base_dir)
}
