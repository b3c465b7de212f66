use std::collections::HashMap;
use std::path::Path;
use std::sync::LazyLock;
use std::time::Duration;

use async_trait::async_trait;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendRequest, Stage};
use crate::script::first_code_block;

/// Entry key that matches any query for its stage.
pub const WILDCARD_KEY: &str = "*";

static QUERY_ID_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^Query ID:[ \t]*(\S+)[ \t]*$").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    MalformedScript,
    RuntimeErrorScript,
    RejectVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockEntry {
    pub stage: Stage,
    pub match_key: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockFault {
    pub stage: Stage,
    pub round_index: u32,
    pub fault_kind: FaultKind,
}

/// Fixture describing what the mock answers. Loaded from JSON:
///
/// ```json
/// {"entries": [{"stage": "actor", "match_key": "q1", "response": "..."}],
///  "fault_schedule": [{"stage": "critic", "round_index": 1, "fault_kind": "reject_verdict"}],
///  "latency_ms": 0}
/// ```
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub entries: Vec<MockEntry>,
    #[serde(default)]
    pub fault_schedule: Vec<MockFault>,
    /// Simulated per-call latency.
    #[serde(default)]
    pub latency_ms: u64,
}

impl MockScript {
    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let script: MockScript =
            serde_json::from_str(text).map_err(|e| BackendError::InvalidMockScript(e.to_string()))?;
        script.validate()?;
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::InvalidMockScript(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let mut seen = HashMap::new();
        for entry in &self.entries {
            if seen.insert((entry.stage, entry.match_key.as_str()), ()).is_some() {
                return Err(BackendError::InvalidMockScript(format!(
                    "duplicate match_key {:?} for stage {}",
                    entry.match_key, entry.stage
                )));
            }
        }
        Ok(())
    }

    pub fn entry(mut self, stage: Stage, key: impl Into<String>, response: impl Into<String>) -> Self {
        self.entries.push(MockEntry {
            stage,
            match_key: key.into(),
            response: response.into(),
        });
        self
    }

    pub fn fault(mut self, stage: Stage, round_index: u32, fault_kind: FaultKind) -> Self {
        self.fault_schedule.push(MockFault {
            stage,
            round_index,
            fault_kind,
        });
        self
    }

    pub fn latency(mut self, latency: Duration) -> Self {
        self.latency_ms = latency.as_millis() as u64;
        self
    }
}

/// Deterministic backend: the response is a pure function of the request's
/// stage, its match key and its round index. It holds no mutable state, so
/// one instance can serve any number of concurrent runs.
#[derive(Debug, Clone)]
pub struct MockBackend {
    entries: HashMap<(Stage, String), String>,
    faults: HashMap<(Stage, u32), FaultKind>,
    latency: Duration,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Result<Self, BackendError> {
        script.validate()?;
        let entries = script
            .entries
            .into_iter()
            .map(|e| ((e.stage, e.match_key), e.response))
            .collect();
        let faults = script
            .fault_schedule
            .into_iter()
            .map(|f| ((f.stage, f.round_index), f.fault_kind))
            .collect();
        Ok(Self {
            entries,
            faults,
            latency: Duration::from_millis(script.latency_ms),
        })
    }

    pub fn latency(&self) -> Duration {
        self.latency
    }

    /// Key the caller embedded in the prompt. A `Query ID:` line wins; otherwise
    /// the longest entry key for the stage that appears in the prompt text.
    fn match_key(&self, request: &BackendRequest) -> Option<String> {
        if let Some(caps) = QUERY_ID_LINE.captures(&request.prompt) {
            return Some(caps[1].to_string());
        }
        self.entries
            .keys()
            .filter(|(stage, key)| {
                *stage == request.stage && key != WILDCARD_KEY && request.prompt.contains(key.as_str())
            })
            .map(|(_, key)| key)
            .max_by(|a, b| a.len().cmp(&b.len()).then_with(|| b.cmp(a)))
            .cloned()
    }

    fn lookup(&self, request: &BackendRequest) -> Result<&str, BackendError> {
        let key = self.match_key(request);
        if let Some(k) = &key {
            if let Some(resp) = self.entries.get(&(request.stage, k.clone())) {
                return Ok(resp);
            }
        }
        self.entries
            .get(&(request.stage, WILDCARD_KEY.to_string()))
            .map(String::as_str)
            .ok_or(BackendError::NoMockEntry {
                stage: request.stage,
                key,
            })
    }

    fn respond(&self, request: &BackendRequest) -> Result<String, BackendError> {
        match self.faults.get(&(request.stage, request.round_index)) {
            Some(kind) => Ok(fault_response(*kind, request)),
            None => self.lookup(request).map(str::to_owned),
        }
    }
}

const MALFORMED_SOURCE: &str = "def broken(:\n    pass\n";
const RUNTIME_ERROR_SOURCE: &str = "raise RuntimeError(\"injected runtime fault\")\n";

fn fenced(source: &str) -> String {
    format!("```python\n{}```", ensure_trailing_newline(source))
}

fn ensure_trailing_newline(s: &str) -> String {
    if s.ends_with('\n') {
        s.to_string()
    } else {
        format!("{s}\n")
    }
}

fn fault_response(kind: FaultKind, request: &BackendRequest) -> String {
    let round = request.round_index;
    match (request.stage, kind) {
        (Stage::Actor, FaultKind::MalformedScript) => fenced(MALFORMED_SOURCE),
        (Stage::Actor, FaultKind::RuntimeErrorScript) => fenced(RUNTIME_ERROR_SOURCE),
        (Stage::Critic, FaultKind::MalformedScript) => format!(
            "VERDICT: REJECT\nRATIONALE: injected malformed rewrite at round {round}\n{}",
            fenced(MALFORMED_SOURCE)
        ),
        (Stage::Critic, FaultKind::RuntimeErrorScript) => format!(
            "VERDICT: REJECT\nRATIONALE: injected failing rewrite at round {round}\n{}",
            fenced(RUNTIME_ERROR_SOURCE)
        ),
        (Stage::Critic, FaultKind::RejectVerdict) => match first_code_block(&request.prompt) {
            Some(script) => format!(
                "VERDICT: REJECT\nRATIONALE: injected rejection at round {round}\n{}",
                fenced(&format!(
                    "{}# critic revision {round}\n",
                    ensure_trailing_newline(&script)
                ))
            ),
            None => format!("VERDICT: REJECT\nRATIONALE: injected rejection at round {round}\n"),
        },
        (_, FaultKind::RejectVerdict) => "VERDICT: REJECT\n".to_string(),
        (_, FaultKind::MalformedScript | FaultKind::RuntimeErrorScript) => {
            "The model produced unstructured text without the expected sections.".to_string()
        }
    }
}

#[async_trait]
impl Backend for MockBackend {
    async fn complete(&self, request: &BackendRequest) -> Result<String, BackendError> {
        request.validate()?;
        if !self.latency.is_zero() {
            tokio::time::sleep(self.latency).await;
        }
        self.respond(request)
    }

    fn name(&self) -> &str {
        "mock"
    }
}
