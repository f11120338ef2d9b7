//! Deterministic scripted backend for fixtures and tests.
//!
//! Rules match by substring on the prompt, first match wins. A rule can
//! carry a fixed choice distribution for `score_choices`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{renormalize, Backend, BackendError, GenerationRequest, GenerationResponse, RequestHints};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRule {
    /// Substring the prompt must contain.
    #[serde(default)]
    pub contains: String,
    /// Additional substrings that must all be present.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains_all: Vec<String>,
    #[serde(default)]
    pub response: String,
    /// Raw (unnormalized) scores keyed by choice label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<char, f64>>,
}

impl ScriptRule {
    pub fn text(contains: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            contains: contains.into(),
            contains_all: Vec::new(),
            response: response.into(),
            scores: None,
        }
    }

    pub fn also_containing(mut self, needle: impl Into<String>) -> Self {
        self.contains_all.push(needle.into());
        self
    }

    pub fn with_scores(mut self, scores: BTreeMap<char, f64>) -> Self {
        self.scores = Some(scores);
        self
    }

    fn matches(&self, prompt: &str) -> bool {
        prompt.contains(&self.contains) && self.contains_all.iter().all(|n| prompt.contains(n))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ScriptFile {
    model_id: String,
    rules: Vec<ScriptRule>,
    #[serde(default)]
    default_response: Option<String>,
}

pub struct ScriptedBackend {
    model_id: String,
    rules: Vec<ScriptRule>,
    default_response: Option<String>,
    calls: AtomicU64,
}

impl ScriptedBackend {
    pub fn new(model_id: impl Into<String>, rules: Vec<ScriptRule>, default_response: Option<String>) -> Self {
        Self {
            model_id: model_id.into(),
            rules,
            default_response,
            calls: AtomicU64::new(0),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("read script {}: {e}", path.display())))?;
        let file: ScriptFile = serde_json::from_str(&content)
            .map_err(|e| BackendError::Config(format!("parse script {}: {e}", path.display())))?;
        Ok(Self::new(file.model_id, file.rules, file.default_response))
    }

    fn matching_rule(&self, prompt: &str) -> Option<&ScriptRule> {
        self.rules.iter().find(|r| r.matches(prompt))
    }
}

impl Backend for ScriptedBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let (text, scores) = match self.matching_rule(&req.prompt) {
            Some(rule) => (rule.response.clone(), rule.scores.clone()),
            None => match &self.default_response {
                Some(default) => (default.clone(), None),
                None => {
                    let head: String = req.prompt.chars().take(80).collect();
                    return Err(BackendError::NoScriptRule(head));
                }
            },
        };
        let per_choice_logprobs = if req.want_token_logprobs {
            scores.map(|s| {
                renormalize(s)
                    .into_iter()
                    .map(|(label, p)| (label.to_string(), p.max(f64::MIN_POSITIVE).ln()))
                    .collect::<BTreeMap<String, f64>>()
            })
        } else {
            None
        };
        Ok(GenerationResponse {
            first_token_logprob: per_choice_logprobs
                .as_ref()
                .and_then(|m| m.values().cloned().reduce(f64::max)),
            text,
            per_choice_logprobs,
            cached: false,
        })
    }

    fn score_choices(
        &self,
        prompt: &str,
        labels: &[char],
        _hints: &RequestHints,
    ) -> Result<BTreeMap<char, f64>, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let rule = self
            .matching_rule(prompt)
            .filter(|r| r.scores.is_some())
            .ok_or_else(|| BackendError::Unsupported("no scored rule matches this prompt".into()))?;
        let raw = rule.scores.as_ref().expect("filtered above");
        let picked: BTreeMap<char, f64> = labels
            .iter()
            .map(|l| (*l, raw.get(l).copied().unwrap_or(0.0)))
            .collect();
        Ok(renormalize(picked))
    }

    fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}
