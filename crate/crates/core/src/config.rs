//! TOML engine configuration with `${VAR}` environment interpolation.
//!
//! ```toml
//! run_store_root = "runs"
//! workers = 4
//!
//! [backend]
//! kind = "remote"
//! name = "primary"
//! endpoint = "https://llm.internal/v1/chat/completions"
//! model = "analyst-large"
//! api_key = "${MASQRAD_BACKEND_API_KEY}"
//!
//! [overrides.actor]
//! temperature = 0.2
//! top_p = 0.9
//! max_new_tokens = 1024
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::path::{Path, PathBuf};
use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backends::{Backend, MockBackend, MockScript, RemoteBackend, RemoteConfig, StageOverrides, API_KEY_ENV};
use crate::debate::DebatePolicy;
use crate::interpreter::{ClassifierHead, HashingEncoder};
use crate::orchestrator::{Engine, RunStore};
use crate::sandbox::{ExecLimits, Runner, Sandbox};

pub const DEFAULT_WORKERS: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Unreadable { path: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("environment variable {0} referenced by the config is not set")]
    MissingEnv(String),
    #[error("{what} {path} does not exist")]
    MissingPath { what: &'static str, path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendProfile {
    Mock {
        #[serde(default = "default_mock_name")]
        name: String,
        script: PathBuf,
        /// Simulated per-call latency; overrides the script's own value.
        #[serde(default)]
        latency_ms: Option<u64>,
    },
    Remote {
        name: String,
        endpoint: String,
        model: String,
        #[serde(default)]
        api_key: Option<String>,
        #[serde(default)]
        max_attempts: Option<u32>,
        #[serde(default)]
        request_timeout_s: Option<u64>,
    },
}

fn default_mock_name() -> String {
    "mock".into()
}

impl BackendProfile {
    pub fn name(&self) -> &str {
        match self {
            BackendProfile::Mock { name, .. } | BackendProfile::Remote { name, .. } => name,
        }
    }
}

fn default_workers() -> usize {
    DEFAULT_WORKERS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub backend: BackendProfile,
    #[serde(default)]
    pub overrides: StageOverrides,
    #[serde(default)]
    pub debate: DebatePolicy,
    #[serde(default)]
    pub limits: ExecLimits,
    #[serde(default)]
    pub runner: Runner,
    pub run_store_root: PathBuf,
    /// Serialized classifier head; the built-in keyword head when absent.
    #[serde(default)]
    pub classifier_head_path: Option<PathBuf>,
    /// Maximum concurrently executing runs in the service.
    #[serde(default = "default_workers")]
    pub workers: usize,
}

static ENV_REF: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("valid regex"));

fn interpolate(s: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<String, ConfigError> {
    let mut out = String::with_capacity(s.len());
    let mut last = 0;
    for caps in ENV_REF.captures_iter(s) {
        let whole = caps.get(0).expect("match");
        out.push_str(&s[last..whole.start()]);
        out.push_str(&lookup(&caps[1]).ok_or_else(|| ConfigError::MissingEnv(caps[1].to_string()))?);
        last = whole.end();
    }
    out.push_str(&s[last..]);
    Ok(out)
}

// Interpolation runs on parsed string values, so a variable's contents can
// never change the document structure.
fn interpolate_value(v: &mut toml::Value, lookup: &dyn Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
    match v {
        toml::Value::String(s) => *s = interpolate(s, lookup)?,
        toml::Value::Array(items) => {
            for item in items {
                interpolate_value(item, lookup)?;
            }
        }
        toml::Value::Table(t) => {
            for (_, item) in t.iter_mut() {
                interpolate_value(item, lookup)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn absolutize(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl EngineConfig {
    /// Parses and validates; relative paths resolve against `base_dir`.
    pub fn from_toml_with(
        text: &str,
        base_dir: &Path,
        lookup: &dyn Fn(&str) -> Option<String>,
    ) -> Result<Self, ConfigError> {
        let mut value: toml::Value = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        interpolate_value(&mut value, lookup)?;
        let mut config: EngineConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Invalid(e.to_string()))?;
        if let BackendProfile::Mock { script, .. } = &mut config.backend {
            absolutize(base_dir, script);
        }
        absolutize(base_dir, &mut config.run_store_root);
        if let Some(p) = &mut config.classifier_head_path {
            absolutize(base_dir, p);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_with(text, base_dir, &|k| std::env::var(k).ok())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let missing = |what, p: &Path| ConfigError::MissingPath {
            what,
            path: p.display().to_string(),
        };
        if let BackendProfile::Mock { script, .. } = &self.backend {
            if !script.is_file() {
                return Err(missing("mock script", script));
            }
        }
        if let Some(p) = &self.classifier_head_path {
            if !p.is_file() {
                return Err(missing("classifier head", p));
            }
        }
        self.overrides
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.debate.validate().map_err(ConfigError::Invalid)?;
        self.limits.validate().map_err(ConfigError::Invalid)?;
        if self.workers == 0 {
            return Err(ConfigError::Invalid("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn build_backend(&self) -> Result<Arc<dyn Backend>, ConfigError> {
        let invalid = |e: crate::backends::BackendError| ConfigError::Invalid(e.to_string());
        Ok(match &self.backend {
            BackendProfile::Mock { script, latency_ms, .. } => {
                let mut s = MockScript::load(script).map_err(invalid)?;
                if let Some(ms) = latency_ms {
                    s.latency_ms = *ms;
                }
                Arc::new(MockBackend::new(s).map_err(invalid)?)
            }
            BackendProfile::Remote {
                endpoint,
                model,
                api_key,
                max_attempts,
                request_timeout_s,
                ..
            } => {
                let mut rc = RemoteConfig::new(endpoint, model);
                if let Some(n) = max_attempts {
                    rc.max_attempts = *n;
                }
                if let Some(t) = request_timeout_s {
                    rc.request_timeout_s = *t;
                }
                let key = api_key.clone().or_else(|| std::env::var(API_KEY_ENV).ok());
                Arc::new(RemoteBackend::new(rc, key).map_err(invalid)?)
            }
        })
    }

    pub fn build_engine(&self) -> Result<Engine, ConfigError> {
        let store = RunStore::open(&self.run_store_root).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut engine = Engine::new(self.build_backend()?, store)
            .with_sandbox(Sandbox::new(self.runner.clone(), self.limits))
            .with_policy(self.debate)
            .with_overrides(self.overrides);
        if let Some(p) = &self.classifier_head_path {
            let head = ClassifierHead::load(p).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            engine = engine.with_classifier(Arc::new(HashingEncoder::new(head.dim())), head);
        }
        Ok(engine)
    }
}
