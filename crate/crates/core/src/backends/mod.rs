//! Text-generation backends.
//!
//! Every agent stage talks to a [`Backend`]. Two implementations ship with the
//! engine: [`MockBackend`], a deterministic table-driven responder used for
//! offline runs and tests, and [`RemoteBackend`], an adapter for a
//! chat-completion style HTTP endpoint.

mod mock;
mod remote;

use std::fmt;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

pub use mock::{FaultKind, MockBackend, MockEntry, MockFault, MockScript};
pub use remote::{RemoteBackend, RemoteConfig, API_KEY_ENV};

/// Default generation cap for the script-producing and analysis stages.
pub const DEFAULT_MAX_NEW_TOKENS: u32 = 2048;

/// Generation cap for the creative interpreter.
pub const INTERPRETER_MAX_NEW_TOKENS: u32 = 64;

/// The pipeline stage a request is issued from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    InterpreterCreative,
    Actor,
    Critic,
    Analysis,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::InterpreterCreative, Stage::Actor, Stage::Critic, Stage::Analysis];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::InterpreterCreative => "interpreter_creative",
            Stage::Actor => "actor",
            Stage::Critic => "critic",
            Stage::Analysis => "analysis",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: u32,
}

impl SamplingParams {
    pub fn new(temperature: f64, top_p: f64, max_new_tokens: u32) -> Result<Self, BackendError> {
        let params = Self {
            temperature,
            top_p,
            max_new_tokens,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(BackendError::InvalidRequest(format!(
                "top_p {} outside (0, 1]",
                self.top_p
            )));
        }
        if self.max_new_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_new_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-stage sampling defaults. `cap` bounds generation for every stage except
/// the creative interpreter, which is fixed at 64 new tokens.
pub fn default_params_with_cap(stage: Stage, cap: u32) -> SamplingParams {
    let (temperature, top_p, max_new_tokens) = match stage {
        Stage::InterpreterCreative => (0.3, 0.7, INTERPRETER_MAX_NEW_TOKENS),
        Stage::Actor => (0.5, 0.9, cap),
        Stage::Critic => (0.7, 0.8, cap),
        Stage::Analysis => (0.4, 0.6, cap),
    };
    SamplingParams {
        temperature,
        top_p,
        max_new_tokens,
    }
}

pub fn default_params(stage: Stage) -> SamplingParams {
    default_params_with_cap(stage, DEFAULT_MAX_NEW_TOKENS)
}

/// Optional per-stage replacements for the default sampling parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageOverrides {
    pub interpreter_creative: Option<SamplingParams>,
    pub actor: Option<SamplingParams>,
    pub critic: Option<SamplingParams>,
    pub analysis: Option<SamplingParams>,
}

impl StageOverrides {
    pub fn get(&self, stage: Stage) -> Option<SamplingParams> {
        match stage {
            Stage::InterpreterCreative => self.interpreter_creative,
            Stage::Actor => self.actor,
            Stage::Critic => self.critic,
            Stage::Analysis => self.analysis,
        }
    }

    /// Override if present, otherwise the stage default.
    pub fn resolve(&self, stage: Stage) -> SamplingParams {
        self.get(stage).unwrap_or_else(|| default_params(stage))
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        for stage in Stage::ALL {
            if let Some(p) = self.get(stage) {
                p.validate()
                    .map_err(|e| BackendError::InvalidRequest(format!("{stage} override: {e}")))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub stage: Stage,
    pub prompt: String,
    pub params: SamplingParams,
    pub request_id: Uuid,
    /// Position of this request within its run's stage: 0 for single-shot
    /// stages, the debate round (from 1) for critics.
    #[serde(default)]
    pub round_index: u32,
}

impl BackendRequest {
    pub fn new(stage: Stage, prompt: impl Into<String>) -> Self {
        Self {
            stage,
            prompt: prompt.into(),
            params: default_params(stage),
            request_id: Uuid::new_v4(),
            round_index: 0,
        }
    }

    pub fn with_params(mut self, params: SamplingParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_round(mut self, round_index: u32) -> Self {
        self.round_index = round_index;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.trim().is_empty() {
            return Err(BackendError::InvalidRequest("prompt is empty".into()));
        }
        self.params.validate()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("no mock entry for stage {stage} and key {key:?}")]
    NoMockEntry { stage: Stage, key: Option<String> },
    #[error("rate limited by provider (retry after {retry_after:?})")]
    RateLimited { retry_after: Option<Duration> },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid mock script: {0}")]
    InvalidMockScript(String),
}

#[async_trait]
pub trait Backend: Send + Sync {
    async fn complete(&self, request: &BackendRequest) -> Result<String, BackendError>;

    /// Cheap reachability probe used by the service health endpoint.
    async fn health(&self) -> Result<(), BackendError> {
        Ok(())
    }

    fn name(&self) -> &str;
}
