//! Model access: one trait over an OpenAI-compatible HTTP client, a
//! deterministic scripted backend, and a parametric synthetic oracle, plus a
//! persistent response cache that wraps any of them.

mod cache;
mod http;
mod scripted;
mod synthetic;

pub use cache::CachedBackend;
pub use http::{HttpBackend, HttpConfig, API_KEY_ENV, ENDPOINT_ENV};
pub use scripted::{ScriptRule, ScriptedBackend};
pub use synthetic::{SyntheticBackend, SyntheticOracleConfig};

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::langspace::LanguageCode;

/// What a prompt is asking for. The synthetic oracle dispatches on this tag
/// rather than sniffing prompt text; other backends ignore it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Answer,
    Feedback,
    Verdict,
    Confidence,
    Translation,
    MoreInfo,
    Judge,
    Other,
}

impl RequestKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RequestKind::Answer => "answer",
            RequestKind::Feedback => "feedback",
            RequestKind::Verdict => "verdict",
            RequestKind::Confidence => "confidence",
            RequestKind::Translation => "translation",
            RequestKind::MoreInfo => "moreinfo",
            RequestKind::Judge => "judge",
            RequestKind::Other => "other",
        }
    }
}

/// Ground-truth context the harness attaches for the synthetic oracle.
/// Real backends never read these.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RequestHints {
    /// Language the output concerns (question language, or feedback language
    /// for feedback requests).
    pub language: Option<LanguageCode>,
    pub gold_label: Option<char>,
    pub labels: Vec<char>,
    pub answer_correct: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub model_id: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub want_token_logprobs: bool,
    pub sample_index: u32,
    pub kind: RequestKind,
    #[serde(default)]
    pub hints: RequestHints,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, kind: RequestKind) -> Self {
        Self {
            model_id: String::new(),
            prompt: prompt.into(),
            temperature: 0.0,
            max_tokens: 512,
            want_token_logprobs: false,
            sample_index: 0,
            kind,
            hints: RequestHints::default(),
        }
    }

    pub fn with_temperature(mut self, temperature: f64, sample_index: u32) -> Self {
        debug_assert!(temperature > 0.0 || sample_index == 0, "greedy requests have one sample");
        self.temperature = temperature;
        self.sample_index = sample_index;
        self
    }

    pub fn with_logprobs(mut self) -> Self {
        self.want_token_logprobs = true;
        self
    }

    pub fn with_hints(mut self, hints: RequestHints) -> Self {
        self.hints = hints;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
    pub first_token_logprob: Option<f64>,
    /// Log-probabilities keyed by token surface form (choice letters, or
    /// True/False for verdicts), when the backend can expose them.
    pub per_choice_logprobs: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub cached: bool,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { message: String, attempts: u32 },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("malformed upstream response: {0}")]
    MalformedUpstream(String),
    #[error("operation unsupported by this backend: {0}")]
    Unsupported(String),
    #[error("scripted backend has no rule for prompt: {0:?}")]
    NoScriptRule(String),
    #[error("cache io error: {0}")]
    CacheIo(String),
    #[error("backend config error: {0}")]
    Config(String),
}

/// A chat-completion model. Implementations must be shareable across
/// concurrently running per-item pipelines.
pub trait Backend: Send + Sync {
    fn model_id(&self) -> &str;

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError>;

    /// Probability over the given choice labels, renormalized to sum to 1.
    fn score_choices(
        &self,
        prompt: &str,
        labels: &[char],
        hints: &RequestHints,
    ) -> Result<BTreeMap<char, f64>, BackendError>;

    /// Number of upstream calls actually performed (cache hits excluded).
    fn call_count(&self) -> u64;
}

pub(crate) fn renormalize(scores: BTreeMap<char, f64>) -> BTreeMap<char, f64> {
    let total: f64 = scores.values().sum();
    if total <= 0.0 {
        let uniform = 1.0 / scores.len().max(1) as f64;
        return scores.into_keys().map(|k| (k, uniform)).collect();
    }
    scores.into_iter().map(|(k, v)| (k, v / total)).collect()
}

/// Counting semaphore capping simultaneous upstream calls.
pub struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            available: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().expect("semaphore poisoned");
        while *permits == 0 {
            permits = self.available.wait(permits).expect("semaphore poisoned");
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

pub struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.semaphore.permits.lock().expect("semaphore poisoned");
        *permits += 1;
        self.semaphore.available.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renormalize_sums_to_one() {
        let raw: BTreeMap<char, f64> = [('A', 0.2), ('B', 0.2)].into();
        let normed = renormalize(raw);
        assert!((normed[&'A'] - 0.5).abs() < 1e-12);
        assert!((normed[&'B'] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn renormalize_zero_mass_falls_back_to_uniform() {
        let raw: BTreeMap<char, f64> = [('A', 0.0), ('B', 0.0)].into();
        let normed = renormalize(raw);
        assert!((normed[&'A'] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn semaphore_caps_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        use std::sync::Arc;

        let sem = Arc::new(Semaphore::new(2));
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let sem = sem.clone();
                let active = active.clone();
                let peak = peak.clone();
                std::thread::spawn(move || {
                    let _guard = sem.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(std::time::Duration::from_millis(5));
                    active.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
