//! Append-only response cache keyed by request hash.
//!
//! The ledger is one JSONL file per model id, loaded into memory at startup.
//! Writes append under a lock and flush immediately, so an interrupted run
//! loses at most the entry being written; replays of a finished run perform
//! zero upstream calls.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, GenerationRequest, GenerationResponse, RequestHints, Semaphore};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    first_token_logprob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    per_choice_logprobs: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scores: Option<BTreeMap<char, f64>>,
}

/// Cache key for a generation request: hash of the identifying fields only,
/// so replays are insensitive to hint metadata.
pub fn generation_key(req: &GenerationRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"gen\x1f");
    hasher.update(req.model_id.as_bytes());
    hasher.update(b"\x1f");
    hasher.update(req.prompt.as_bytes());
    hasher.update(b"\x1f");
    hasher.update(format!("{:.6}", req.temperature).as_bytes());
    hasher.update(b"\x1f");
    hasher.update(req.max_tokens.to_le_bytes());
    hasher.update(req.sample_index.to_le_bytes());
    hex(&hasher.finalize())
}

fn score_key(model_id: &str, prompt: &str, labels: &[char]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"score\x1f");
    hasher.update(model_id.as_bytes());
    hasher.update(b"\x1f");
    hasher.update(prompt.as_bytes());
    hasher.update(b"\x1f");
    for l in labels {
        hasher.update([*l as u8]);
    }
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn sanitize_model_id(model_id: &str) -> String {
    model_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// Wraps any backend with the persistent cache, a per-run request log, and
/// the global upstream concurrency cap.
pub struct CachedBackend {
    inner: Box<dyn Backend>,
    entries: RwLock<HashMap<String, CacheEntry>>,
    ledger: Mutex<BufWriter<File>>,
    request_log: Mutex<Option<BufWriter<File>>>,
    limiter: Semaphore,
    hits: AtomicU64,
    path: PathBuf,
}

impl CachedBackend {
    /// Opens (or creates) `cache_dir/<model_id>.jsonl` and loads it.
    pub fn open(
        inner: Box<dyn Backend>,
        cache_dir: &Path,
        concurrency: usize,
    ) -> Result<Self, BackendError> {
        std::fs::create_dir_all(cache_dir)
            .map_err(|e| BackendError::CacheIo(format!("create {}: {e}", cache_dir.display())))?;
        let path = cache_dir.join(format!("{}.jsonl", sanitize_model_id(inner.model_id())));
        let mut entries = HashMap::new();
        if path.exists() {
            let content = std::fs::read_to_string(&path)
                .map_err(|e| BackendError::CacheIo(format!("read {}: {e}", path.display())))?;
            for line in content.lines() {
                if line.trim().is_empty() {
                    continue;
                }
                // tolerate a torn final line from a killed process
                if let Ok(entry) = serde_json::from_str::<CacheEntry>(line) {
                    entries.insert(entry.key.clone(), entry);
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| BackendError::CacheIo(format!("open {}: {e}", path.display())))?;
        Ok(Self {
            inner,
            entries: RwLock::new(entries),
            ledger: Mutex::new(BufWriter::new(file)),
            request_log: Mutex::new(None),
            limiter: Semaphore::new(concurrency),
            hits: AtomicU64::new(0),
            path,
        })
    }

    pub fn cache_path(&self) -> &Path {
        &self.path
    }

    pub fn cache_hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Routes request keys to a per-run log file.
    pub fn set_request_log(&self, path: &Path) -> Result<(), BackendError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| BackendError::CacheIo(format!("open {}: {e}", path.display())))?;
        *self.request_log.lock().expect("log poisoned") = Some(BufWriter::new(file));
        Ok(())
    }

    /// True if every key in the given request log is present in the cache.
    pub fn covers_log(&self, log_content: &str) -> bool {
        let entries = self.entries.read().expect("cache poisoned");
        log_content
            .lines()
            .filter(|l| !l.trim().is_empty())
            .all(|key| entries.contains_key(key.trim()))
    }

    fn log_request(&self, key: &str) {
        if let Some(log) = self.request_log.lock().expect("log poisoned").as_mut() {
            let _ = writeln!(log, "{key}");
            let _ = log.flush();
        }
    }

    fn persist(&self, entry: CacheEntry) -> Result<(), BackendError> {
        let line = serde_json::to_string(&entry)
            .map_err(|e| BackendError::CacheIo(format!("serialize cache entry: {e}")))?;
        {
            let mut ledger = self.ledger.lock().expect("ledger poisoned");
            writeln!(ledger, "{line}")
                .and_then(|_| ledger.flush())
                .map_err(|e| BackendError::CacheIo(format!("append cache entry: {e}")))?;
        }
        self.entries
            .write()
            .expect("cache poisoned")
            .insert(entry.key.clone(), entry);
        Ok(())
    }
}

impl Backend for CachedBackend {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let mut req = req.clone();
        if req.model_id.is_empty() {
            req.model_id = self.inner.model_id().to_string();
        }
        let key = generation_key(&req);
        self.log_request(&key);
        if let Some(entry) = self.entries.read().expect("cache poisoned").get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(GenerationResponse {
                text: entry.text.clone().unwrap_or_default(),
                first_token_logprob: entry.first_token_logprob,
                per_choice_logprobs: entry.per_choice_logprobs.clone(),
                cached: true,
            });
        }
        let response = {
            let _permit = self.limiter.acquire();
            self.inner.generate(&req)?
        };
        self.persist(CacheEntry {
            key,
            text: Some(response.text.clone()),
            first_token_logprob: response.first_token_logprob,
            per_choice_logprobs: response.per_choice_logprobs.clone(),
            scores: None,
        })?;
        Ok(response)
    }

    fn score_choices(
        &self,
        prompt: &str,
        labels: &[char],
        hints: &RequestHints,
    ) -> Result<BTreeMap<char, f64>, BackendError> {
        let key = score_key(self.inner.model_id(), prompt, labels);
        self.log_request(&key);
        if let Some(entry) = self.entries.read().expect("cache poisoned").get(&key) {
            if let Some(scores) = &entry.scores {
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(scores.clone());
            }
        }
        let scores = {
            let _permit = self.limiter.acquire();
            self.inner.score_choices(prompt, labels, hints)?
        };
        self.persist(CacheEntry {
            key,
            text: None,
            first_token_logprob: None,
            per_choice_logprobs: None,
            scores: Some(scores.clone()),
        })?;
        Ok(scores)
    }

    fn call_count(&self) -> u64 {
        self.inner.call_count()
    }
}
