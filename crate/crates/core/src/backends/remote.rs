use std::time::Duration;

use async_trait::async_trait;
use reqwest::header::{HeaderMap, RETRY_AFTER};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendRequest};

pub const API_KEY_ENV: &str = "MASQRAD_BACKEND_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Full URL of the chat-completion endpoint.
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    /// First backoff delay; doubles on each retry.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_s")]
    pub request_timeout_s: u64,
}

fn default_attempts() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    500
}

fn default_timeout_s() -> u64 {
    120
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            max_attempts: default_attempts(),
            backoff_ms: default_backoff_ms(),
            request_timeout_s: default_timeout_s(),
        }
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
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: String,
}

/// Adapter for a provider-neutral chat-completion endpoint.
pub struct RemoteBackend {
    config: RemoteConfig,
    api_key: Option<String>,
    client: reqwest::Client,
}

impl RemoteBackend {
    /// Builds the adapter, reading the API key from `MASQRAD_BACKEND_API_KEY`.
    pub fn from_env(config: RemoteConfig) -> Result<Self, BackendError> {
        Self::new(config, std::env::var(API_KEY_ENV).ok())
    }

    pub fn new(config: RemoteConfig, api_key: Option<String>) -> Result<Self, BackendError> {
        if config.max_attempts == 0 {
            return Err(BackendError::InvalidRequest("max_attempts must be at least 1".into()));
        }
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.request_timeout_s))
            .build()
            .map_err(|e| BackendError::BackendUnavailable(e.to_string()))?;
        Ok(Self {
            config,
            api_key,
            client,
        })
    }

    async fn attempt(&self, request: &BackendRequest) -> Result<String, BackendError> {
        let body = ChatRequest {
            model: &self.config.model,
            messages: [ChatMessage {
                role: "user",
                content: &request.prompt,
            }],
            temperature: request.params.temperature,
            top_p: request.params.top_p,
            max_tokens: request.params.max_new_tokens,
        };
        let mut http = self.client.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            http = http.bearer_auth(key);
        }
        let response = http
            .send()
            .await
            .map_err(|e| BackendError::BackendUnavailable(e.to_string()))?;
        let status = response.status();
        if status == StatusCode::TOO_MANY_REQUESTS {
            return Err(BackendError::RateLimited {
                retry_after: retry_after(response.headers()),
            });
        }
        if !status.is_success() {
            let text = response.text().await.unwrap_or_default();
            return Err(BackendError::BackendUnavailable(format!(
                "provider returned {status}: {}",
                text.chars().take(200).collect::<String>()
            )));
        }
        let parsed: ChatResponse = response
            .json()
            .await
            .map_err(|e| BackendError::BackendUnavailable(format!("bad provider payload: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| BackendError::BackendUnavailable("provider returned no choices".into()))
    }
}

fn retry_after(headers: &HeaderMap) -> Option<Duration> {
    headers
        .get(RETRY_AFTER)?
        .to_str()
        .ok()?
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|s| s.is_finite() && *s >= 0.0)
        .map(Duration::from_secs_f64)
}

#[async_trait]
impl Backend for RemoteBackend {
    async fn complete(&self, request: &BackendRequest) -> Result<String, BackendError> {
        request.validate()?;
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut attempt = 1;
        loop {
            match self.attempt(request).await {
                Err(BackendError::RateLimited { retry_after }) if attempt < self.config.max_attempts => {
                    let wait = retry_after.map_or(delay, |r| r.max(delay));
                    tracing::warn!(attempt, ?wait, "provider throttled, backing off");
                    tokio::time::sleep(wait).await;
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    async fn health(&self) -> Result<(), BackendError> {
        // Any HTTP answer means the provider is reachable.
        self.client
            .get(&self.config.endpoint)
            .timeout(Duration::from_secs(5))
            .send()
            .await
            .map(|_| ())
            .map_err(|e| BackendError::BackendUnavailable(e.to_string()))
    }

    fn name(&self) -> &str {
        "remote"
    }
}
