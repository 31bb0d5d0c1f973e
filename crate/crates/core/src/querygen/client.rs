//! Chat-completion backends and order-preserving concurrent generation.

use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::prompt::PromptText;
use super::{parse_queries, QuerySet};
use crate::querygen::mock::MockChat;

pub const DEFAULT_API_KEY_ENV: &str = "QUEREC_LLM_API_KEY";

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("service returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed service response: {0}")]
    Response(String),
    #[error("no parseable queries for {subject_id:?}; raw response: {raw:?}")]
    Generation { subject_id: String, raw: String },
    #[error("client configuration: {0}")]
    Config(String),
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        match self {
            LlmError::Transport { .. } => true,
            LlmError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Anything that turns a prompt into a raw completion string.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, prompt: &PromptText) -> Result<String, LlmError>;
}

fn default_api_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_owned()
}
fn default_concurrency() -> usize {
    4
}
fn default_timeout() -> u64 {
    120
}
fn default_attempts() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmClientConfig {
    #[serde(default)]
    pub endpoint_url: String,
    #[serde(default)]
    pub model_name: String,
    #[serde(default = "default_api_key_env")]
    pub api_key_env_var: String,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    /// Per-request timeout in seconds.
    #[serde(default = "default_timeout")]
    pub timeout: u64,
    #[serde(default)]
    pub mock_mode: bool,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl Default for LlmClientConfig {
    fn default() -> Self {
        Self {
            endpoint_url: String::new(),
            model_name: String::new(),
            api_key_env_var: default_api_key_env(),
            max_concurrency: default_concurrency(),
            timeout: default_timeout(),
            mock_mode: false,
            max_attempts: default_attempts(),
            temperature: None,
            max_tokens: None,
        }
    }
}

impl LlmClientConfig {
    pub fn mock() -> Self {
        Self {
            mock_mode: true,
            ..Self::default()
        }
    }

    pub fn backend(&self) -> Result<Box<dyn ChatBackend>, LlmError> {
        if self.max_concurrency == 0 {
            return Err(LlmError::Config("max_concurrency must be at least 1".into()));
        }
        if self.mock_mode {
            return Ok(Box::new(MockChat));
        }
        Ok(Box::new(HttpChat::new(self)?))
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

/// OpenAI-compatible chat-completions client (vLLM, llama.cpp server, ...).
pub struct HttpChat {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    temperature: Option<f64>,
    max_tokens: Option<u32>,
}

impl HttpChat {
    pub fn new(cfg: &LlmClientConfig) -> Result<Self, LlmError> {
        if cfg.endpoint_url.is_empty() {
            return Err(LlmError::Config("endpoint_url is empty".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint: cfg.endpoint_url.clone(),
            model: cfg.model_name.clone(),
            api_key: std::env::var(&cfg.api_key_env_var).ok().filter(|k| !k.is_empty()),
            temperature: cfg.temperature,
            max_tokens: cfg.max_tokens,
        })
    }
}

impl ChatBackend for HttpChat {
    fn complete(&self, prompt: &PromptText) -> Result<String, LlmError> {
        let body = ChatRequest {
            model: &self.model,
            messages: [
                ChatMessage {
                    role: "system",
                    content: &prompt.system,
                },
                ChatMessage {
                    role: "user",
                    content: &prompt.user,
                },
            ],
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        };
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| LlmError::Transport {
            attempts: 1,
            message: e.to_string(),
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| LlmError::Transport {
                attempts: 1,
                message: e.to_string(),
            })?;
        if !(200..300).contains(&status) {
            return Err(LlmError::Status { status, body: text });
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| LlmError::Response(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Response("no choices[0].message.content".into()))
    }
}

fn complete_with_retry(
    backend: &dyn ChatBackend,
    prompt: &PromptText,
    max_attempts: u32,
) -> Result<String, LlmError> {
    let max_attempts = max_attempts.max(1);
    let mut attempt = 1;
    loop {
        match backend.complete(prompt) {
            Ok(raw) => return Ok(raw),
            Err(e) if e.is_retryable() && attempt < max_attempts => {
                log::warn!("LLM attempt {attempt}/{max_attempts} failed: {e}; retrying");
                std::thread::sleep(Duration::from_millis(200 * (1 << (attempt - 1).min(5))));
                attempt += 1;
            }
            Err(LlmError::Transport { message, .. }) => {
                return Err(LlmError::Transport {
                    attempts: attempt,
                    message,
                })
            }
            Err(e) => return Err(e),
        }
    }
}

/// Call the backend for one prompt and parse the reply into a query set.
pub fn generate_query_set(
    subject_id: &str,
    prompt: &PromptText,
    backend: &dyn ChatBackend,
    max_attempts: u32,
) -> Result<QuerySet, LlmError> {
    let raw = complete_with_retry(backend, prompt, max_attempts)?;
    let queries = parse_queries(&raw);
    if queries.is_empty() {
        return Err(LlmError::Generation {
            subject_id: subject_id.to_owned(),
            raw,
        });
    }
    if queries.len() < 10 {
        log::warn!(
            "{subject_id}: only {} queries parsed from the response",
            queries.len()
        );
    }
    Ok(QuerySet {
        subject_id: subject_id.to_owned(),
        queries,
        raw_response: raw,
    })
}

/// Generate query sets for many prompts with at most `max_concurrency`
/// requests in flight. Output order matches input order.
pub fn generate_query_sets(
    jobs: &[(String, PromptText)],
    backend: &dyn ChatBackend,
    max_concurrency: usize,
    max_attempts: u32,
) -> Vec<Result<QuerySet, LlmError>> {
    let run = || {
        jobs.par_iter()
            .map(|(id, prompt)| generate_query_set(id, prompt, backend, max_attempts))
            .collect()
    };
    match rayon::ThreadPoolBuilder::new()
        .num_threads(max_concurrency.max(1))
        .build()
    {
        Ok(pool) => pool.install(run),
        Err(_) => jobs
            .iter()
            .map(|(id, prompt)| generate_query_set(id, prompt, backend, max_attempts))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Canned(&'static str);
    impl ChatBackend for Canned {
        fn complete(&self, _: &PromptText) -> Result<String, LlmError> {
            Ok(self.0.to_owned())
        }
    }

    struct Flaky {
        failures: AtomicU32,
    }
    impl ChatBackend for Flaky {
        fn complete(&self, _: &PromptText) -> Result<String, LlmError> {
            if self.failures.fetch_sub(1, Ordering::SeqCst) > 0 {
                Err(LlmError::Transport {
                    attempts: 1,
                    message: "reset".into(),
                })
            } else {
                Ok("1. fine".into())
            }
        }
    }

    fn prompt() -> PromptText {
        PromptText {
            system: "s".into(),
            user: "u".into(),
        }
    }

    #[test]
    fn ten_numbered_lines_become_ten_queries() {
        let raw = (1..=10).map(|i| format!("{i}. query {i}")).collect::<Vec<_>>().join("\n");
        let leaked: &'static str = Box::leak(raw.into_boxed_str());
        let qs = generate_query_set("i", &prompt(), &Canned(leaked), 1).unwrap();
        assert_eq!(qs.queries.len(), 10);
        assert_eq!(qs.queries[0], "query 1");
        assert_eq!(qs.queries[9], "query 10");
        assert_eq!(qs.raw_response, leaked);
    }

    #[test]
    fn twelve_lines_keep_first_ten() {
        let raw = (1..=12).map(|i| format!("q{i}")).collect::<Vec<_>>().join("\n");
        let leaked: &'static str = Box::leak(raw.into_boxed_str());
        let qs = generate_query_set("i", &prompt(), &Canned(leaked), 1).unwrap();
        assert_eq!(qs.queries, (1..=10).map(|i| format!("q{i}")).collect::<Vec<_>>());
    }

    #[test]
    fn header_only_reply_is_generation_error() {
        let err = generate_query_set("i", &prompt(), &Canned("### sorry"), 1).unwrap_err();
        match err {
            LlmError::Generation { raw, subject_id } => {
                assert_eq!(raw, "### sorry");
                assert_eq!(subject_id, "i");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn transport_errors_retry_then_report_attempts() {
        let ok = Flaky {
            failures: AtomicU32::new(2),
        };
        assert!(generate_query_set("i", &prompt(), &ok, 3).is_ok());
        let bad = Flaky {
            failures: AtomicU32::new(5),
        };
        match generate_query_set("i", &prompt(), &bad, 2).unwrap_err() {
            LlmError::Transport { attempts, .. } => assert_eq!(attempts, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn concurrent_generation_preserves_order() {
        let jobs: Vec<(String, PromptText)> = (0..20)
            .map(|i| {
                (
                    format!("s{i}"),
                    PromptText {
                        system: "s".into(),
                        user: format!("- **Item Title**: Widget{i}"),
                    },
                )
            })
            .collect();
        let out = generate_query_sets(&jobs, &MockChat, 4, 1);
        for (i, r) in out.iter().enumerate() {
            let qs = r.as_ref().unwrap();
            assert_eq!(qs.subject_id, format!("s{i}"));
            assert_eq!(qs.raw_response, crate::querygen::mock::mock_reply(&jobs[i].1));
        }
    }

    #[test]
    fn zero_concurrency_rejected() {
        let cfg = LlmClientConfig {
            max_concurrency: 0,
            ..LlmClientConfig::mock()
        };
        assert!(matches!(cfg.backend(), Err(LlmError::Config(_))));
    }
}
