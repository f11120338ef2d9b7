//! Parametric synthetic oracle.
//!
//! A fake model with configurable per-language answer accuracy and feedback
//! reliability, used for hermetic pipeline validation at desk scale. Every
//! output is a pure function of (seed, prompt, sample_index, kind), so runs
//! are bit-identical and cache replay is exact.
//!
//! Prompt kinds come from harness-supplied request tags. The one place the
//! oracle reads prompt text is the verdict: it tallies the stance markers
//! its own feedback template emitted, mirroring how a real model would weigh
//! the feedback it is shown.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{renormalize, Backend, BackendError, GenerationRequest, GenerationResponse, RequestHints, RequestKind};
use crate::langspace::LanguageCode;
use crate::rng::{derive_seed, SplitMix64};

pub const STANCE_CORRECT: &str = "likely correct";
pub const STANCE_INCORRECT: &str = "likely incorrect";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticOracleConfig {
    #[serde(default = "default_model_id")]
    pub model_id: String,
    /// Per-language probability of answering correctly.
    #[serde(default)]
    pub answer_accuracy: BTreeMap<LanguageCode, f64>,
    #[serde(default = "default_half")]
    pub default_answer_accuracy: f64,
    /// Per-language probability that a feedback text correctly labels the
    /// proposed answer. Keyed by the feedback language.
    #[serde(default)]
    pub feedback_reliability: BTreeMap<LanguageCode, f64>,
    #[serde(default = "default_half")]
    pub default_feedback_reliability: f64,
    /// Gaussian noise on verbalized confidence.
    #[serde(default)]
    pub confidence_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_model_id() -> String {
    "synthetic-oracle".to_string()
}

fn default_half() -> f64 {
    0.5
}

impl Default for SyntheticOracleConfig {
    fn default() -> Self {
        Self {
            model_id: default_model_id(),
            answer_accuracy: BTreeMap::new(),
            default_answer_accuracy: 0.5,
            feedback_reliability: BTreeMap::new(),
            default_feedback_reliability: 0.5,
            confidence_noise: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticOracleConfig {
    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("read oracle {}: {e}", path.display())))?;
        let config: Self = serde_json::from_str(&content)
            .map_err(|e| BackendError::Config(format!("parse oracle {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let probs = self
            .answer_accuracy
            .values()
            .chain(self.feedback_reliability.values())
            .chain([&self.default_answer_accuracy, &self.default_feedback_reliability]);
        for &p in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(BackendError::Config(format!("probability {p} outside [0,1]")));
            }
        }
        if self.confidence_noise < 0.0 {
            return Err(BackendError::Config("confidence noise must be >= 0".into()));
        }
        Ok(())
    }

    fn answer_accuracy_for(&self, lang: Option<LanguageCode>) -> f64 {
        lang.and_then(|l| self.answer_accuracy.get(&l).copied())
            .unwrap_or(self.default_answer_accuracy)
    }

    fn reliability_for(&self, lang: Option<LanguageCode>) -> f64 {
        lang.and_then(|l| self.feedback_reliability.get(&l).copied())
            .unwrap_or(self.default_feedback_reliability)
    }
}

pub struct SyntheticBackend {
    config: SyntheticOracleConfig,
    calls: AtomicU64,
}

impl SyntheticBackend {
    pub fn new(config: SyntheticOracleConfig) -> Self {
        Self {
            config,
            calls: AtomicU64::new(0),
        }
    }

    fn rng_for(&self, req: &GenerationRequest) -> SplitMix64 {
        let index = req.sample_index.to_string();
        SplitMix64::new(derive_seed(
            self.config.seed,
            &[req.kind.as_str(), &req.prompt, &index],
        ))
    }

    fn missing_hint(kind: RequestKind, what: &str) -> BackendError {
        BackendError::Unsupported(format!("synthetic {} request needs {what} hint", kind.as_str()))
    }

    fn answer(&self, req: &GenerationRequest, rng: &mut SplitMix64) -> Result<GenerationResponse, BackendError> {
        let gold = req
            .hints
            .gold_label
            .ok_or_else(|| Self::missing_hint(req.kind, "gold_label"))?;
        let labels = if req.hints.labels.is_empty() {
            vec!['A', 'B', 'C', 'D']
        } else {
            req.hints.labels.clone()
        };
        let accuracy = self.config.answer_accuracy_for(req.hints.language);
        let correct = rng.next_f64() < accuracy;
        let label = if correct {
            gold
        } else {
            let wrong: Vec<char> = labels.iter().copied().filter(|l| *l != gold).collect();
            if wrong.is_empty() {
                gold
            } else {
                wrong[rng.next_below(wrong.len() as u64) as usize]
            }
        };
        Ok(GenerationResponse {
            text: format!("Answer: {label}"),
            ..Default::default()
        })
    }

    fn feedback(&self, req: &GenerationRequest, rng: &mut SplitMix64) -> Result<GenerationResponse, BackendError> {
        let answer_correct = req
            .hints
            .answer_correct
            .ok_or_else(|| Self::missing_hint(req.kind, "answer_correct"))?;
        let reliability = self.config.reliability_for(req.hints.language);
        let labels_truthfully = rng.next_f64() < reliability;
        let stance_correct = if labels_truthfully { answer_correct } else { !answer_correct };
        let marker = if stance_correct { STANCE_CORRECT } else { STANCE_INCORRECT };
        let lang = req
            .hints
            .language
            .map(|l| l.to_string())
            .unwrap_or_else(|| "xx".to_string());
        Ok(GenerationResponse {
            text: format!("[{lang}] After reviewing the question, the proposed answer is {marker}."),
            ..Default::default()
        })
    }

    fn verdict(&self, req: &GenerationRequest, rng: &mut SplitMix64) -> Result<GenerationResponse, BackendError> {
        let correct_votes = req.prompt.matches(STANCE_CORRECT).count();
        let incorrect_votes = req.prompt.matches(STANCE_INCORRECT).count();
        let (p_false, answer_is_true) = if correct_votes + incorrect_votes > 0 {
            let p_false =
                (incorrect_votes as f64 + 0.5) / ((correct_votes + incorrect_votes) as f64 + 1.0);
            (p_false, correct_votes > incorrect_votes)
        } else {
            // no feedback in the prompt (reflect-style): self-assess with
            // the configured reliability
            let answer_correct = req
                .hints
                .answer_correct
                .ok_or_else(|| Self::missing_hint(req.kind, "answer_correct"))?;
            let reliability = self.config.reliability_for(req.hints.language);
            let truthful = rng.next_f64() < reliability;
            let says_true = if truthful { answer_correct } else { !answer_correct };
            let p_false = if says_true { 0.25 } else { 0.75 };
            (p_false, says_true)
        };
        let text = if answer_is_true { "True" } else { "False" };
        let per_choice_logprobs = req.want_token_logprobs.then(|| {
            BTreeMap::from([
                ("True".to_string(), (1.0 - p_false).max(f64::MIN_POSITIVE).ln()),
                ("False".to_string(), p_false.max(f64::MIN_POSITIVE).ln()),
            ])
        });
        Ok(GenerationResponse {
            first_token_logprob: per_choice_logprobs
                .as_ref()
                .and_then(|m| m.values().cloned().reduce(f64::max)),
            text: text.to_string(),
            per_choice_logprobs,
            cached: false,
        })
    }

    fn confidence(&self, req: &GenerationRequest, rng: &mut SplitMix64) -> Result<GenerationResponse, BackendError> {
        let answer_correct = req
            .hints
            .answer_correct
            .ok_or_else(|| Self::missing_hint(req.kind, "answer_correct"))?;
        let base = if answer_correct { 0.9 } else { 0.1 };
        let value = (base + self.config.confidence_noise * rng.next_gaussian()).clamp(0.0, 1.0);
        Ok(GenerationResponse {
            text: format!("{value:.4}"),
            ..Default::default()
        })
    }

    fn more_info(&self, req: &GenerationRequest, rng: &mut SplitMix64) -> Result<GenerationResponse, BackendError> {
        let answer_correct = req
            .hints
            .answer_correct
            .ok_or_else(|| Self::missing_hint(req.kind, "answer_correct"))?;
        let reliability = self.config.reliability_for(req.hints.language);
        let truthful = rng.next_f64() < reliability;
        let needs_info = if truthful { !answer_correct } else { answer_correct };
        Ok(GenerationResponse {
            text: if needs_info { "Yes" } else { "No" }.to_string(),
            ..Default::default()
        })
    }

    fn translation(&self, req: &GenerationRequest) -> GenerationResponse {
        let target = req
            .hints
            .language
            .map(|l| l.to_string())
            .unwrap_or_else(|| "en".to_string());
        GenerationResponse {
            text: format!("[{target}] {}", req.prompt),
            ..Default::default()
        }
    }
}

impl Backend for SyntheticBackend {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let mut rng = self.rng_for(req);
        match req.kind {
            RequestKind::Answer => self.answer(req, &mut rng),
            RequestKind::Feedback => self.feedback(req, &mut rng),
            RequestKind::Verdict => self.verdict(req, &mut rng),
            RequestKind::Confidence => self.confidence(req, &mut rng),
            RequestKind::MoreInfo => self.more_info(req, &mut rng),
            RequestKind::Translation => Ok(self.translation(req)),
            RequestKind::Judge => Ok(GenerationResponse {
                text: "A".to_string(),
                ..Default::default()
            }),
            RequestKind::Other => Ok(GenerationResponse {
                text: "OK".to_string(),
                ..Default::default()
            }),
        }
    }

    fn score_choices(
        &self,
        prompt: &str,
        labels: &[char],
        hints: &RequestHints,
    ) -> Result<BTreeMap<char, f64>, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let gold = hints
            .gold_label
            .ok_or_else(|| Self::missing_hint(RequestKind::Answer, "gold_label"))?;
        let mut rng = SplitMix64::new(derive_seed(self.config.seed, &["score", prompt]));
        let p = self.config.answer_accuracy_for(hints.language);
        // gold mass interpolates toward certainty as p -> 1
        let jitter = rng.next_f64() * 0.5;
        let gold_mass = p + (1.0 - p) * jitter;
        let rest = (1.0 - gold_mass).max(0.0);
        let others = labels.iter().filter(|l| **l != gold).count().max(1);
        let scores: BTreeMap<char, f64> = labels
            .iter()
            .map(|l| {
                if *l == gold {
                    (*l, gold_mass)
                } else {
                    (*l, rest / others as f64)
                }
            })
            .collect();
        Ok(renormalize(scores))
    }

    fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}
