//! Abstention strategies: the four feedback-based modes plus the adaptable
//! baselines, all producing [`AbstainRecord`]s.
//!
//! Every strategy follows the same skeleton per test item: propose an answer
//! greedily, gather whatever evidence the strategy calls for (multilingual
//! feedback, self-reflection, sampled consistency, token probabilities, a
//! second model), then make a binary abstain decision. Threshold strategies
//! tune their cutoff on the validation split first.

pub mod extract;
pub mod prompts;
mod pipeline;
mod threshold;

pub use pipeline::{decide_abstain_with_feedback, generate_feedback_bundle, propose_answer};
pub use prompts::{render, render_with_feedback, PromptSet};
pub use threshold::{apply_temperature, fit_temperature, threshold_a_acc, tune_threshold, ThresholdConfig};

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError};
use crate::corpus::QAItem;
use crate::langspace::{LangError, LanguageCode, LanguageSpace, RelatednessMode};

pub const DEFAULT_FEEDBACK_COUNT: usize = 3;
pub const DEFAULT_SC_SAMPLES: usize = 5;
pub const FEEDBACK_TEMPERATURE: f64 = 0.7;

/// One generated feedback text and the language it was requested in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    pub language_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<LanguageCode>,
    pub text: String,
}

/// The k feedback texts for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackBundle {
    pub item_id: String,
    pub feedback: Vec<FeedbackEntry>,
}

impl FeedbackBundle {
    pub fn len(&self) -> usize {
        self.feedback.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feedback.is_empty()
    }

    pub fn texts(&self) -> Vec<String> {
        self.feedback.iter().map(|f| f.text.clone()).collect()
    }
}

/// Per-question outcome of one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstainRecord {
    pub item_id: String,
    pub language: LanguageCode,
    pub strategy: String,
    pub proposed_answer: char,
    pub answer_correct: bool,
    pub abstain: bool,
    /// Probability mass on the abstain-implying verdict token, when the
    /// backend exposed token probabilities for the verdict.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abstain_prob: Option<f64>,
    pub raw_verdict: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<FeedbackBundle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_tag: Option<String>,
}

/// An item that produced no scored record (with the stage and reason), so
/// nothing is ever silently dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub item_id: String,
    pub stage: String,
    pub reason: String,
}

#[derive(Debug)]
pub struct StrategyRunOutput {
    pub strategy: String,
    pub records: Vec<AbstainRecord>,
    pub failures: Vec<ItemFailure>,
    /// Verdict completions that parsed to neither True nor False and were
    /// conservatively mapped to abstain.
    pub verdict_unparseable: usize,
    pub threshold: Option<ThresholdConfig>,
}

/// Declarative strategy selection, as written in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub name: String,
    /// Relatedness mode for `multi_related` (default: the averaged-attribute
    /// tables).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<RelatednessMode>,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Sample count for `sc_threshold`.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Preset threshold; skips validation tuning when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

fn default_k() -> usize {
    DEFAULT_FEEDBACK_COUNT
}

fn default_samples() -> usize {
    DEFAULT_SC_SAMPLES
}

impl StrategySpec {
    pub fn named(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            mode: None,
            k: DEFAULT_FEEDBACK_COUNT,
            samples: DEFAULT_SC_SAMPLES,
            threshold: None,
        }
    }

    pub fn with_mode(mut self, mode: RelatednessMode) -> Self {
        self.mode = Some(mode);
        self
    }

    /// Stable identifier for file names and report cells.
    pub fn id(&self) -> String {
        match (self.name.as_str(), self.mode) {
            ("multi_related", Some(mode)) if mode != RelatednessMode::Default => {
                format!("multi_related:{mode}")
            }
            _ => self.name.clone(),
        }
    }
}

/// How feedback languages are picked for the feedback-based strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackLanguageMode {
    MonoNative,
    MonoEnglish,
    MultiRandom,
    MultiRelated(RelatednessMode),
    /// Same feedback content, translated into the related languages.
    LangVar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Feedback(FeedbackLanguageMode),
    Probs,
    Temp,
    AskCalibration,
    Reflect,
    MoreInfo,
    Backtranslation,
    ScThreshold,
    Conflict,
}

impl Strategy {
    pub fn parse(spec: &StrategySpec) -> Result<Self, StrategyError> {
        use FeedbackLanguageMode::*;
        Ok(match spec.name.as_str() {
            "mono_native" => Strategy::Feedback(MonoNative),
            "mono_english" => Strategy::Feedback(MonoEnglish),
            "multi_random" => Strategy::Feedback(MultiRandom),
            "multi_related" => {
                Strategy::Feedback(MultiRelated(spec.mode.unwrap_or(RelatednessMode::Default)))
            }
            "reverse" => Strategy::Feedback(MultiRelated(RelatednessMode::Reverse)),
            "self_included" => Strategy::Feedback(MultiRelated(RelatednessMode::SelfIncluded)),
            "lang_var" => Strategy::Feedback(LangVar),
            "probs" => Strategy::Probs,
            "temp" => Strategy::Temp,
            "ask_calibration" => Strategy::AskCalibration,
            "reflect" => Strategy::Reflect,
            "moreinfo" => Strategy::MoreInfo,
            "backtranslation" => Strategy::Backtranslation,
            "sc_threshold" => Strategy::ScThreshold,
            "conflict" => Strategy::Conflict,
            other => return Err(StrategyError::UnknownStrategy(other.to_string())),
        })
    }

    /// Every registry name, for CLI help and config validation.
    pub const NAMES: [&'static str; 15] = [
        "mono_native",
        "mono_english",
        "multi_random",
        "multi_related",
        "reverse",
        "self_included",
        "lang_var",
        "probs",
        "temp",
        "ask_calibration",
        "reflect",
        "moreinfo",
        "backtranslation",
        "sc_threshold",
        "conflict",
    ];

    pub fn needs_threshold(&self) -> bool {
        matches!(
            self,
            Strategy::Probs | Strategy::Temp | Strategy::AskCalibration | Strategy::ScThreshold
        )
    }
}

impl FromStr for Strategy {
    type Err = StrategyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::parse(&StrategySpec::named(s))
    }
}

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("unknown strategy {0}")]
    UnknownStrategy(String),
    #[error("strategy unavailable: {0}")]
    Unsupported(String),
    #[error("threshold strategy requires a non-empty validation split")]
    EmptyValidation,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Lang(#[from] LangError),
}

/// Shared, read-only context for one strategy run.
pub struct StrategyContext<'a> {
    pub space: &'a LanguageSpace,
    pub prompts: &'a PromptSet,
    /// Model that proposes answers and makes abstain decisions.
    pub answerer: &'a dyn Backend,
    /// Model that generates feedback (may equal the answerer).
    pub feedback: &'a dyn Backend,
    pub seed: u64,
    /// Label for threshold provenance (the validation split id).
    pub split_label: String,
    /// Abstain decisions shared across languages for `backtranslation`,
    /// keyed by item id.
    pub shared_decisions: &'a Mutex<BTreeMap<String, bool>>,
}

/// Runs one strategy over the test items, tuning on validation where the
/// strategy calls for it. Emits one record (or one recorded failure) per
/// test item, sorted by item id.
pub fn run_strategy(
    spec: &StrategySpec,
    validation: &[QAItem],
    test: &[QAItem],
    ctx: &StrategyContext<'_>,
) -> Result<StrategyRunOutput, StrategyError> {
    let strategy = Strategy::parse(spec)?;
    pipeline::execute(strategy, spec, validation, test, ctx)
}
