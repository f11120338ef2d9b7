//! OpenAI-compatible chat-completions client.
//!
//! Single user message per call, bounded retry with doubling backoff, and
//! Retry-After-aware rate-limit handling. Endpoint and auth come from the
//! run config or the `PA_ENDPOINT` / `PA_API_KEY` environment variables.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{renormalize, Backend, BackendError, GenerationRequest, GenerationResponse, RequestHints, RequestKind};

pub const ENDPOINT_ENV: &str = "PA_ENDPOINT";
pub const API_KEY_ENV: &str = "PA_API_KEY";

const MAX_ATTEMPTS: u32 = 5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpConfig {
    pub endpoint: String,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub initial_backoff_ms: u64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_max_attempts() -> u32 {
    MAX_ATTEMPTS
}

fn default_backoff_ms() -> u64 {
    1000
}

fn default_timeout_secs() -> u64 {
    120
}

impl HttpConfig {
    /// Endpoint and key from the environment; errors if `PA_ENDPOINT` is unset.
    pub fn from_env(model_id: impl Into<String>) -> Result<Self, BackendError> {
        let endpoint = std::env::var(ENDPOINT_ENV)
            .map_err(|_| BackendError::Config(format!("{ENDPOINT_ENV} not set")))?;
        Ok(Self {
            endpoint,
            model_id: model_id.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            max_attempts: MAX_ATTEMPTS,
            initial_backoff_ms: 1000,
            timeout_secs: 120,
        })
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    calls: AtomicU64,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent_config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build();
        Self {
            config,
            agent: agent_config.into(),
            calls: AtomicU64::new(0),
        }
    }

    fn completions_url(&self) -> String {
        let base = self.config.endpoint.trim_end_matches('/');
        if base.ends_with("/v1/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/v1/chat/completions")
        }
    }

    fn request_body(&self, req: &GenerationRequest) -> serde_json::Value {
        let mut body = json!({
            "model": self.config.model_id,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if req.want_token_logprobs {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(20);
        }
        body
    }

    fn post_with_retry(&self, body: &serde_json::Value) -> Result<serde_json::Value, BackendError> {
        let url = self.completions_url();
        let mut backoff = Duration::from_millis(self.config.initial_backoff_ms);
        let mut last_error = String::new();
        let mut rate_limited = false;

        for attempt in 1..=self.config.max_attempts {
            if attempt > 1 {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
            self.calls.fetch_add(1, Ordering::Relaxed);
            let mut request = self.agent.post(&url).header("content-type", "application/json");
            if let Some(key) = &self.config.api_key {
                request = request.header("authorization", format!("Bearer {key}"));
            }
            match request.send_json(body) {
                Ok(mut response) => {
                    let status = response.status();
                    if status.as_u16() == 429 {
                        rate_limited = true;
                        last_error = "429 rate limited".to_string();
                        if let Some(wait) = response
                            .headers()
                            .get("retry-after")
                            .and_then(|v| v.to_str().ok())
                            .and_then(|v| v.trim().parse::<u64>().ok())
                        {
                            backoff = Duration::from_secs(wait).max(Duration::from_millis(1));
                        }
                        continue;
                    }
                    if status.is_server_error() {
                        rate_limited = false;
                        last_error = format!("upstream status {status}");
                        continue;
                    }
                    if !status.is_success() {
                        // 4xx other than 429 will not improve with retries
                        return Err(BackendError::MalformedUpstream(format!(
                            "upstream status {status}"
                        )));
                    }
                    return response
                        .body_mut()
                        .read_json::<serde_json::Value>()
                        .map_err(|e| BackendError::MalformedUpstream(format!("invalid JSON body: {e}")));
                }
                Err(e) => {
                    rate_limited = false;
                    last_error = e.to_string();
                }
            }
        }
        if rate_limited {
            Err(BackendError::RateLimited {
                attempts: self.config.max_attempts,
            })
        } else {
            Err(BackendError::Transport {
                message: last_error,
                attempts: self.config.max_attempts,
            })
        }
    }

    fn parse_completion(value: &serde_json::Value) -> Result<GenerationResponse, BackendError> {
        let choice = value
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| BackendError::MalformedUpstream("missing choices[0]".into()))?;
        let text = choice
            .pointer("/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| BackendError::MalformedUpstream("missing message.content".into()))?
            .to_string();

        let first_token = choice.pointer("/logprobs/content/0");
        let first_token_logprob = first_token.and_then(|t| t.get("logprob")).and_then(|v| v.as_f64());
        let per_choice_logprobs = first_token
            .and_then(|t| t.get("top_logprobs"))
            .and_then(|v| v.as_array())
            .map(|tops| {
                tops.iter()
                    .filter_map(|entry| {
                        let token = entry.get("token")?.as_str()?.trim().to_string();
                        let logprob = entry.get("logprob")?.as_f64()?;
                        (!token.is_empty()).then_some((token, logprob))
                    })
                    .collect::<BTreeMap<String, f64>>()
            })
            .filter(|m| !m.is_empty());

        Ok(GenerationResponse {
            text,
            first_token_logprob,
            per_choice_logprobs,
            cached: false,
        })
    }
}

impl Backend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let body = self.request_body(req);
        let value = self.post_with_retry(&body)?;
        Self::parse_completion(&value)
    }

    fn score_choices(
        &self,
        prompt: &str,
        labels: &[char],
        _hints: &RequestHints,
    ) -> Result<BTreeMap<char, f64>, BackendError> {
        let req = GenerationRequest {
            model_id: self.config.model_id.clone(),
            prompt: prompt.to_string(),
            temperature: 0.0,
            max_tokens: 1,
            want_token_logprobs: true,
            sample_index: 0,
            kind: RequestKind::Answer,
            hints: RequestHints::default(),
        };
        let body = self.request_body(&req);
        let value = self.post_with_retry(&body)?;
        let parsed = Self::parse_completion(&value)?;
        let tops = parsed.per_choice_logprobs.ok_or_else(|| {
            BackendError::Unsupported("upstream returned no token logprobs".into())
        })?;
        let mut scores: BTreeMap<char, f64> = BTreeMap::new();
        for label in labels {
            if let Some(lp) = tops.get(&label.to_string()) {
                scores.insert(*label, lp.exp());
            }
        }
        if scores.is_empty() {
            return Err(BackendError::Unsupported(
                "no choice tokens among top logprobs".into(),
            ));
        }
        for label in labels {
            scores.entry(*label).or_insert(0.0);
        }
        Ok(renormalize(scores))
    }

    fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}
