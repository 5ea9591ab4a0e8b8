//! The eight agents as schema-checked request/response exchanges over a
//! pluggable completion backend.

mod backend;
mod ops;
mod schema;

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::logic::LogicError;

pub use backend::{
    fingerprint, BackendError, CompletionBackend, CompletionRequest, Fixture, FixtureFile, HttpBackend, HttpConfig,
    ScriptedBackend,
};
pub use ops::{
    Agents, CandidateMetrics, Canonicalized, Edit, FactorFeedback, FeedbackSummary, GeneratedFactor, Generation,
    LogicContext, RefinementAction, RefinementRecord, Rejected,
};
pub use schema::{validate, AgentName, SchemaViolation, Template};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("{agent}: request payload violates the input schema at {violation}")]
    InvalidInput { agent: AgentName, violation: SchemaViolation },
    #[error("{agent}: {source}")]
    Backend { agent: AgentName, source: BackendError },
    #[error("{agent}: no schema-valid reply after {attempts} attempts; last problem: {last}")]
    SchemaExhausted { agent: AgentName, attempts: usize, last: String },
    #[error("{stage}: {message}")]
    Invariant { stage: AgentName, message: String },
    #[error("precondition: {0}")]
    Precondition(String),
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error("no valid factor after {regenerations} rejected candidates")]
    NoValidCandidates { regenerations: usize, rejected: Vec<Rejected> },
}

impl AgentError {
    pub fn agent(&self) -> Option<AgentName> {
        match self {
            AgentError::InvalidInput { agent, .. }
            | AgentError::Backend { agent, .. }
            | AgentError::SchemaExhausted { agent, .. } => Some(*agent),
            AgentError::Invariant { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, AgentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Repair re-prompts after the first schema-invalid reply.
    pub max_retries: usize,
    /// Rejected generated expressions tolerated per generation request.
    pub regeneration_budget: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig { max_retries: 3, regeneration_budget: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRequest {
    pub agent_name: AgentName,
    pub system: String,
    pub instruction: String,
    pub input_payload: Value,
}

impl AgentRequest {
    pub fn new(agent: AgentName, payload: Value) -> Self {
        let t = agent.template();
        AgentRequest { agent_name: agent, system: t.system.clone(), instruction: t.instruction.clone(), input_payload: payload }
    }

    /// The user message: instruction, input and the expected output shape.
    pub fn render_user(&self) -> String {
        let t = self.agent_name.template();
        format!(
            "{}\n\ninput:\n{}\n\noutput_schema:\n{}",
            self.instruction,
            serde_json::to_string_pretty(&self.input_payload).expect("JSON values serialize"),
            serde_json::to_string_pretty(&t.output_schema).expect("JSON values serialize"),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub agent_name: AgentName,
    pub output_payload: Value,
    pub raw_text: String,
    /// Completions requested, including the accepted one.
    pub attempts: usize,
}

/// Pulls one JSON object out of a completion, tolerating code fences and
/// surrounding prose.
pub fn extract_json(text: &str) -> std::result::Result<Value, String> {
    let trimmed = text.trim();
    if let Ok(v) = serde_json::from_str::<Value>(trimmed) {
        return Ok(v);
    }
    let (start, end) = match (trimmed.find('{'), trimmed.rfind('}')) {
        (Some(s), Some(e)) if s < e => (s, e),
        _ => return Err("reply contains no JSON object".into()),
    };
    serde_json::from_str(&trimmed[start..=end]).map_err(|e| format!("reply is not valid JSON: {e}"))
}

fn repair_note(attempt: usize, problem: &str) -> String {
    format!(
        "\n\nrepair {attempt}: the previous reply was rejected ({problem}). Reply with a single JSON object that matches output_schema exactly, with no other text."
    )
}

/// Validates the payload, asks the backend, and re-prompts with a repair note
/// while the reply fails the output schema, up to `max_retries` times.
pub fn call_agent(
    agent: AgentName,
    payload: Value,
    backend: &dyn CompletionBackend,
    max_retries: usize,
) -> Result<AgentResponse> {
    let t = agent.template();
    validate(&t.input_schema, &payload).map_err(|violation| AgentError::InvalidInput { agent, violation })?;
    let request = AgentRequest::new(agent, payload);
    let fp = fingerprint(&request.input_payload);
    let mut user = request.render_user();
    let mut last = String::new();
    for attempt in 0..=max_retries {
        if attempt > 0 {
            user.push_str(&repair_note(attempt, &last));
        }
        let req = CompletionRequest {
            agent,
            system: &request.system,
            user: &user,
            payload: &request.input_payload,
            fingerprint: &fp,
            attempt,
        };
        let raw = backend.complete(&req).map_err(|source| AgentError::Backend { agent, source })?;
        let problem = match extract_json(&raw) {
            Ok(v) => match validate(&t.output_schema, &v) {
                Ok(()) => return Ok(AgentResponse { agent_name: agent, output_payload: v, raw_text: raw, attempts: attempt + 1 }),
                Err(e) => e.to_string(),
            },
            Err(e) => e,
        };
        tracing::debug!(%agent, attempt, %problem, "schema-invalid completion");
        last = problem;
    }
    Err(AgentError::SchemaExhausted { agent, attempts: max_retries + 1, last })
}

/// One backend call as seen by a [`RecordingBackend`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub agent: AgentName,
    pub payload: Value,
    pub attempt: usize,
    pub completion: std::result::Result<String, String>,
}

/// Wraps a backend and keeps every request and reply.
#[derive(Debug)]
pub struct RecordingBackend<B> {
    inner: B,
    log: Mutex<Vec<Exchange>>,
}

impl<B> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend { inner, log: Mutex::new(Vec::new()) }
    }

    pub fn exchanges(&self) -> Vec<Exchange> {
        self.log.lock().expect("log lock").clone()
    }

    pub fn count(&self, agent: AgentName) -> usize {
        self.log.lock().expect("log lock").iter().filter(|e| e.agent == agent).count()
    }
}

impl<B: CompletionBackend> CompletionBackend for RecordingBackend<B> {
    fn complete(&self, req: &CompletionRequest<'_>) -> std::result::Result<String, BackendError> {
        let out = self.inner.complete(req);
        self.log.lock().expect("log lock").push(Exchange {
            agent: req.agent,
            payload: req.payload.clone(),
            attempt: req.attempt,
            completion: out.clone().map_err(|e| e.to_string()),
        });
        out
    }
}
