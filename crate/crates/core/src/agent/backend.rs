//! Completion backends: a fixture-driven scripted table and an HTTP
//! chat-completion client.

use std::fs;
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::schema::AgentName;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("no fixture for {agent} with payload fingerprint {fingerprint}")]
    MissingFixture { agent: AgentName, fingerprint: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

/// One completion call: rendered messages plus what the scripted table keys on.
#[derive(Debug, Clone)]
pub struct CompletionRequest<'a> {
    pub agent: AgentName,
    pub system: &'a str,
    pub user: &'a str,
    pub payload: &'a Value,
    pub fingerprint: &'a str,
    /// 0 for the first try, then one per repair retry.
    pub attempt: usize,
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError>;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for &B {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Box<B> {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

/// SHA-256 hex of the payload's compact JSON. Object keys serialize sorted,
/// so the hash does not depend on construction order.
pub fn fingerprint(payload: &Value) -> String {
    let text = serde_json::to_string(payload).expect("JSON values serialize");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// A scripted reply. `fingerprint` pins one exact payload; otherwise `match`
/// (default: empty, i.e. any payload) must be a subset of the payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub agent: AgentName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    #[serde(rename = "match", default, skip_serializing_if = "Option::is_none")]
    pub matches: Option<Value>,
    /// Indexed by attempt; the last entry repeats. Strings are returned as
    /// is, other values as their compact JSON.
    pub completions: Vec<Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureFile {
    pub fixtures: Vec<Fixture>,
}

fn is_subset(pattern: &Value, v: &Value) -> bool {
    match (pattern, v) {
        (Value::Object(p), Value::Object(o)) => p.iter().all(|(k, pv)| o.get(k).is_some_and(|ov| is_subset(pv, ov))),
        _ => pattern == v,
    }
}

/// Immutable fixture table. Exact fingerprints win over `match` entries;
/// among `match` entries the first in file order wins.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    fixtures: Vec<Fixture>,
}

impl ScriptedBackend {
    pub fn new(fixtures: Vec<Fixture>) -> Result<Self, BackendError> {
        if let Some(f) = fixtures.iter().find(|f| f.completions.is_empty()) {
            return Err(BackendError::Config(format!("fixture for {} has no completions", f.agent)));
        }
        Ok(ScriptedBackend { fixtures })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        let file: FixtureFile =
            serde_json::from_str(&text).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        ScriptedBackend::new(file.fixtures)
    }

    pub fn fixtures(&self) -> &[Fixture] {
        &self.fixtures
    }

    fn find(&self, agent: AgentName, payload: &Value, fp: &str) -> Option<&Fixture> {
        let mine = || self.fixtures.iter().filter(move |f| f.agent == agent);
        mine().find(|f| f.fingerprint.as_deref() == Some(fp)).or_else(|| {
            mine().find(|f| f.fingerprint.is_none() && f.matches.as_ref().is_none_or(|m| is_subset(m, payload)))
        })
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, req: &CompletionRequest<'_>) -> Result<String, BackendError> {
        let fixture = self.find(req.agent, req.payload, req.fingerprint).ok_or_else(|| BackendError::MissingFixture {
            agent: req.agent,
            fingerprint: req.fingerprint.to_string(),
        })?;
        let c = &fixture.completions[req.attempt.min(fixture.completions.len() - 1)];
        Ok(match c {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer credential.
    pub credential_env: String,
    pub timeout_secs: u64,
    pub max_transport_retries: u32,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub max_concurrency: usize,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            credential_env: "FACTORLOGIC_API_KEY".into(),
            timeout_secs: 120,
            max_transport_retries: 2,
            temperature: 0.0,
            seed: Some(0),
            max_concurrency: 4,
        }
    }
}

struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn enter(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().expect("gate lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate lock");
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate lock") += 1;
        self.0.cv.notify_one();
    }
}

/// Chat-completion client. The credential is read from the environment once,
/// at construction.
pub struct HttpBackend {
    config: HttpConfig,
    credential: String,
    agent: ureq::Agent,
    gate: Gate,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend").field("config", &self.config).finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn from_env(config: HttpConfig) -> Result<Self, BackendError> {
        let credential = std::env::var(&config.credential_env)
            .ok()
            .filter(|v| !v.trim().is_empty())
            .ok_or_else(|| BackendError::Config(format!("environment variable {} is not set", config.credential_env)))?;
        if config.max_concurrency == 0 {
            return Err(BackendError::Config("max_concurrency must be positive".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        let gate = Gate { free: Mutex::new(config.max_concurrency), cv: Condvar::new() };
        Ok(HttpBackend { config, credential, agent, gate })
    }

    fn body(&self, req: &CompletionRequest<'_>) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
        });
        if let Some(seed) = self.config.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn post_once(&self, body: &Value) -> Result<String, BackendError> {
        let mut resp = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {}", self.credential))
            .send_json(body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let v: Value = resp.body_mut().read_json().map_err(|e| BackendError::Transport(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Transport("response has no choices[0].message.content".into()))
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, req: &CompletionRequest<'_>) -> Result<String, BackendError> {
        let _slot = self.gate.enter();
        let body = self.body(req);
        let mut last = None;
        for attempt in 0..=self.config.max_transport_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(500 << attempt.min(5)));
            }
            match self.post_once(&body) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    tracing::warn!(agent = %req.agent, attempt, error = %e, "completion request failed");
                    last = Some(e);
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }
}
