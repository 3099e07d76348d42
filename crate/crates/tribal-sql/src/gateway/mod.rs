//! The single LLM boundary.
//!
//! Every model interaction in the crate — chat completions and embeddings —
//! goes through a [`Gateway`] wrapping some [`Backend`]. No other module
//! performs network I/O; with the [`scripted::ScriptedBackend`] the whole
//! system runs deterministically offline.
//!
//! The gateway enforces request validation, a context token budget, retry
//! with schema repair for structured responses, and keeps per-gateway
//! counters (calls, tokens, wall time). [`Gateway::fork`] hands out a
//! handle sharing the backend but with fresh counters, so callers can meter
//! a single question's cost in isolation.

pub mod http;
pub mod schema;
pub mod scripted;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Message author role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One chat message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            text: text.into(),
        }
    }
    pub fn user(text: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            text: text.into(),
        }
    }
    pub fn assistant(text: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            text: text.into(),
        }
    }
}

/// Structured-response tags. The first five name a validated JSON shape
/// (see [`schema`]); `AgentTurn` and `Feedback` are free-text channels that
/// only need to be non-empty, and exist so scripted playback and logging
/// can route by call site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaTag {
    TkRow,
    Correction,
    RequiredCorrections,
    FilterKnowledge,
    NaiveKnowledge,
    AgentTurn,
    Feedback,
}

impl SchemaTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SchemaTag::TkRow => "tk_row",
            SchemaTag::Correction => "correction",
            SchemaTag::RequiredCorrections => "required_corrections",
            SchemaTag::FilterKnowledge => "filter_knowledge",
            SchemaTag::NaiveKnowledge => "naive_knowledge",
            SchemaTag::AgentTurn => "agent_turn",
            SchemaTag::Feedback => "feedback",
        }
    }

    pub fn parse(name: &str) -> Option<SchemaTag> {
        match name {
            "tk_row" => Some(SchemaTag::TkRow),
            "correction" => Some(SchemaTag::Correction),
            "required_corrections" => Some(SchemaTag::RequiredCorrections),
            "filter_knowledge" => Some(SchemaTag::FilterKnowledge),
            "naive_knowledge" => Some(SchemaTag::NaiveKnowledge),
            "agent_turn" => Some(SchemaTag::AgentTurn),
            "feedback" => Some(SchemaTag::Feedback),
            _ => None,
        }
    }
}

impl fmt::Display for SchemaTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A validated chat request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub schema: Option<SchemaTag>,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        ChatRequest {
            messages,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_TOKEN_CAP,
            schema: None,
        }
    }

    pub fn with_schema(mut self, tag: SchemaTag) -> Self {
        self.schema = Some(tag);
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_max_tokens(mut self, cap: u32) -> Self {
        self.max_tokens = cap;
        self
    }
}

/// Completion plus bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    /// Estimated completion tokens.
    pub token_count: u32,
    /// Process-unique id of this logical call.
    pub call_id: u64,
}

/// An embedding with the tag of the model that produced it. Vectors with
/// different tags are not comparable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_tag: String,
}

/// Provider abstraction: one chat completion or one embedding.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String>;
    fn embed(&self, text: &str) -> Result<EmbeddingVector>;
    /// Short name for logs and reports.
    fn name(&self) -> &'static str;
}

/// Default sampling temperature.
pub const DEFAULT_TEMPERATURE: f64 = 0.5;
/// Default context token cap per request.
pub const DEFAULT_TOKEN_CAP: u32 = 128_000;

/// Gateway-level policy knobs.
#[derive(Debug, Clone)]
pub struct GatewayLimits {
    /// Total attempts per logical call (transport and schema failures
    /// share this budget).
    pub retry_cap: usize,
    /// Upper bound any request's `max_tokens` may take.
    pub max_token_cap: u32,
    /// Optional hard cap on logical calls.
    pub call_cap: Option<u64>,
    /// Optional cumulative token budget (prompt + completion estimates).
    pub token_budget: Option<u64>,
}

impl Default for GatewayLimits {
    fn default() -> Self {
        GatewayLimits {
            retry_cap: 3,
            max_token_cap: DEFAULT_TOKEN_CAP,
            call_cap: None,
            token_budget: None,
        }
    }
}

/// Rough token estimate: one token per four characters, rounded up.
pub fn token_estimate(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// Cosine similarity between two equal-length vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Validation(format!(
            "embedding dimensions differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

static NEXT_CALL_ID: AtomicU64 = AtomicU64::new(1);

/// The metered LLM entry point.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    limits: GatewayLimits,
    calls: AtomicU64,
    attempts: AtomicU64,
    tokens: AtomicU64,
    embeds: AtomicU64,
    llm_nanos: AtomicU64,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, limits: GatewayLimits) -> Self {
        Gateway {
            backend,
            limits,
            calls: AtomicU64::new(0),
            attempts: AtomicU64::new(0),
            tokens: AtomicU64::new(0),
            embeds: AtomicU64::new(0),
            llm_nanos: AtomicU64::new(0),
        }
    }

    /// A handle on the same backend with fresh counters (per-question or
    /// per-worker metering).
    pub fn fork(&self) -> Gateway {
        Gateway::new(Arc::clone(&self.backend), self.limits.clone())
    }

    /// Logical chat calls made through this handle (retries do not add).
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// Provider attempts, including retries.
    pub fn attempt_count(&self) -> u64 {
        self.attempts.load(Ordering::Relaxed)
    }

    /// Estimated prompt + completion tokens consumed.
    pub fn token_count(&self) -> u64 {
        self.tokens.load(Ordering::Relaxed)
    }

    /// Embedding calls made.
    pub fn embed_count(&self) -> u64 {
        self.embeds.load(Ordering::Relaxed)
    }

    /// Wall-clock milliseconds spent inside the backend.
    pub fn elapsed_ms(&self) -> u64 {
        self.llm_nanos.load(Ordering::Relaxed) / 1_000_000
    }

    /// Backend name for reports.
    pub fn backend_name(&self) -> &'static str {
        self.backend.name()
    }

    fn validate(&self, request: &ChatRequest) -> Result<()> {
        if request.messages.is_empty() {
            return Err(Error::EmptyInput("chat messages"));
        }
        if request.messages[0].role == Role::Assistant {
            return Err(Error::Validation(
                "first chat message must be system or user".into(),
            ));
        }
        if request.messages.iter().any(|m| m.text.trim().is_empty()) {
            return Err(Error::EmptyInput("chat message text"));
        }
        if !(0.0..=2.0).contains(&request.temperature) {
            return Err(Error::Validation(format!(
                "temperature {} outside [0, 2]",
                request.temperature
            )));
        }
        if request.max_tokens == 0 || request.max_tokens > self.limits.max_token_cap {
            return Err(Error::Validation(format!(
                "max_tokens {} outside 1..={}",
                request.max_tokens, self.limits.max_token_cap
            )));
        }
        Ok(())
    }

    /// One logical chat call: validate, meter, dispatch with retries, and
    /// (for schema-tagged requests) check the structured shape, asking the
    /// model to repair malformed replies until the retry budget runs out.
    pub fn chat(&self, request: ChatRequest) -> Result<ChatResponse> {
        self.validate(&request)?;

        let prompt_tokens: u64 = request.messages.iter().map(|m| token_estimate(&m.text)).sum();
        if prompt_tokens > u64::from(request.max_tokens) {
            return Err(Error::BudgetExceeded(format!(
                "prompt is ~{} tokens, over the {}-token context cap",
                prompt_tokens, request.max_tokens
            )));
        }
        if let Some(cap) = self.limits.call_cap {
            if self.calls.load(Ordering::Relaxed) >= cap {
                return Err(Error::BudgetExceeded(format!("call cap {cap} reached")));
            }
        }
        if let Some(budget) = self.limits.token_budget {
            if self.tokens.load(Ordering::Relaxed) >= budget {
                return Err(Error::BudgetExceeded(format!(
                    "token budget {budget} exhausted"
                )));
            }
        }

        let call_id = NEXT_CALL_ID.fetch_add(1, Ordering::Relaxed);
        self.calls.fetch_add(1, Ordering::Relaxed);

        let mut working = request.clone();
        let mut last_error: Option<Error> = None;
        for _attempt in 0..self.limits.retry_cap.max(1) {
            self.attempts.fetch_add(1, Ordering::Relaxed);
            let started = Instant::now();
            let outcome = self.backend.complete(&working);
            self.llm_nanos
                .fetch_add(started.elapsed().as_nanos() as u64, Ordering::Relaxed);

            let text = match outcome {
                Ok(t) => t,
                Err(e) => {
                    last_error = Some(e);
                    continue;
                }
            };
            let spent: u64 = working
                .messages
                .iter()
                .map(|m| token_estimate(&m.text))
                .sum::<u64>()
                + token_estimate(&text);
            self.tokens.fetch_add(spent, Ordering::Relaxed);

            match check_response(working.schema, &text) {
                Ok(()) => {
                    return Ok(ChatResponse {
                        token_count: token_estimate(&text) as u32,
                        text,
                        call_id,
                    });
                }
                Err(problem) => {
                    working.messages.push(ChatMessage::assistant(text));
                    working.messages.push(ChatMessage::user(format!(
                        "Your previous reply was not usable: {problem}. \
                         Reply again following the required format exactly."
                    )));
                    last_error = Some(Error::MalformedOutput(problem));
                }
            }
        }
        Err(match last_error {
            Some(Error::MalformedOutput(m)) => Error::MalformedOutput(format!(
                "still malformed after {} attempt(s): {m}",
                self.limits.retry_cap
            )),
            Some(e) => e,
            None => Error::Transport("no attempts were made".into()),
        })
    }

    /// Embed one non-empty text.
    pub fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(Error::EmptyInput("embedding text"));
        }
        self.embeds.fetch_add(1, Ordering::Relaxed);
        let started = Instant::now();
        let out = self.backend.embed(text.trim());
        self.llm_nanos
            .fetch_add(started.elapsed().as_nanos() as u64, Ordering::Relaxed);
        let v = out?;
        if v.values.is_empty() {
            return Err(Error::Transport("backend returned an empty embedding".into()));
        }
        Ok(v)
    }

    /// Cosine similarity of the embeddings of two texts.
    pub fn emb_sim(&self, a: &str, b: &str) -> Result<f64> {
        let ea = self.embed(a)?;
        let eb = self.embed(b)?;
        if ea.model_tag != eb.model_tag {
            return Err(Error::Validation(format!(
                "embeddings from different models: {} vs {}",
                ea.model_tag, eb.model_tag
            )));
        }
        cosine(&ea.values, &eb.values)
    }
}

/// Validate a completion against its schema tag, returning a problem
/// description on failure. Untagged and free-text-tagged calls only require
/// non-empty text.
fn check_response(tag: Option<SchemaTag>, text: &str) -> std::result::Result<(), String> {
    if text.trim().is_empty() {
        return Err("empty completion".into());
    }
    match tag {
        None | Some(SchemaTag::AgentTurn) | Some(SchemaTag::Feedback) => Ok(()),
        Some(t) => schema::validate(t, text).map_err(|e| e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::scripted::ScriptedBackend;
    use super::*;

    fn gw(backend: ScriptedBackend) -> Gateway {
        Gateway::new(Arc::new(backend), GatewayLimits::default())
    }

    #[test]
    fn chat_returns_scripted_response_and_counts() {
        let backend = ScriptedBackend::new().with_response(None, "hello", "world");
        let g = gw(backend);
        let resp = g
            .chat(ChatRequest::new(vec![ChatMessage::user("say hello please")]))
            .unwrap();
        assert_eq!(resp.text, "world");
        assert_eq!(g.call_count(), 1);
        assert!(g.token_count() > 0);
        assert!(resp.call_id > 0);
    }

    #[test]
    fn fork_shares_backend_but_not_counters() {
        let backend = ScriptedBackend::new().with_response(None, "*", "ok");
        let g = gw(backend);
        g.chat(ChatRequest::new(vec![ChatMessage::user("anything")]))
            .unwrap();
        let f = g.fork();
        assert_eq!(g.call_count(), 1);
        assert_eq!(f.call_count(), 0);
        f.chat(ChatRequest::new(vec![ChatMessage::user("more")]))
            .unwrap();
        assert_eq!(f.call_count(), 1);
        assert_eq!(g.call_count(), 1);
    }

    #[test]
    fn validation_rejects_bad_requests() {
        let g = gw(ScriptedBackend::new());
        assert!(matches!(
            g.chat(ChatRequest::new(vec![])),
            Err(Error::EmptyInput(_))
        ));
        assert!(g
            .chat(ChatRequest::new(vec![ChatMessage::user("x")]).with_temperature(3.0))
            .is_err());
        assert!(g
            .chat(ChatRequest::new(vec![ChatMessage::user("x")]).with_max_tokens(0))
            .is_err());
        assert!(g
            .chat(ChatRequest::new(vec![ChatMessage::assistant("x")]))
            .is_err());
    }

    #[test]
    fn oversized_prompt_exceeds_budget() {
        let g = gw(ScriptedBackend::new().with_response(None, "*", "ok"));
        let big = "x".repeat(100);
        let err = g
            .chat(ChatRequest::new(vec![ChatMessage::user(big)]).with_max_tokens(10))
            .unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded(_)), "got {err}");
    }

    #[test]
    fn call_cap_is_enforced() {
        let backend = ScriptedBackend::new().with_response(None, "*", "ok");
        let limits = GatewayLimits {
            call_cap: Some(1),
            ..GatewayLimits::default()
        };
        let g = Gateway::new(Arc::new(backend), limits);
        g.chat(ChatRequest::new(vec![ChatMessage::user("one")]))
            .unwrap();
        let err = g
            .chat(ChatRequest::new(vec![ChatMessage::user("two")]))
            .unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded(_)));
    }

    #[test]
    fn schema_failures_trigger_repair_then_succeed() {
        // First reply is not valid JSON for the tag; the repair prompt keys
        // the corrected reply.
        let backend = ScriptedBackend::new()
            .with_response(Some(SchemaTag::NaiveKnowledge), "summarize", "not json at all")
            .with_response(
                Some(SchemaTag::NaiveKnowledge),
                "not usable",
                r#"{"statement": "always filter by name"}"#,
            );
        let g = gw(backend);
        let resp = g
            .chat(
                ChatRequest::new(vec![ChatMessage::user("summarize this mistake")])
                    .with_schema(SchemaTag::NaiveKnowledge),
            )
            .unwrap();
        assert!(resp.text.contains("always filter"));
        assert_eq!(g.call_count(), 1, "repair is part of one logical call");
        assert_eq!(g.attempt_count(), 2);
    }

    #[test]
    fn persistent_schema_failure_is_malformed_output() {
        let backend =
            ScriptedBackend::new().with_response(Some(SchemaTag::NaiveKnowledge), "*", "junk");
        let g = gw(backend);
        let err = g
            .chat(
                ChatRequest::new(vec![ChatMessage::user("summarize")])
                    .with_schema(SchemaTag::NaiveKnowledge),
            )
            .unwrap_err();
        assert!(matches!(err, Error::MalformedOutput(_)), "got {err}");
        assert_eq!(g.attempt_count(), 3);
    }

    #[test]
    fn missing_script_is_transport_error() {
        let g = gw(ScriptedBackend::new());
        let err = g
            .chat(ChatRequest::new(vec![ChatMessage::user("unmatched")]))
            .unwrap_err();
        assert!(matches!(err, Error::Transport(_)));
    }

    #[test]
    fn emb_sim_is_symmetric_and_self_similarity_is_one() {
        let g = gw(ScriptedBackend::new());
        let pairs = [
            ("total sales for Nike", "revenue from Polo"),
            ("list stores in Berlin", "count products"),
        ];
        for (a, b) in pairs {
            let ab = g.emb_sim(a, b).unwrap();
            let ba = g.emb_sim(b, a).unwrap();
            assert!((ab - ba).abs() < 1e-12);
            assert!((g.emb_sim(a, a).unwrap() - 1.0).abs() < 1e-9);
            assert!((-1.0..=1.0).contains(&ab));
        }
        assert!(g.emb_sim("", "x").is_err());
    }

    #[test]
    fn cosine_rejects_dimension_mismatch() {
        assert!(cosine(&[1.0, 0.0], &[1.0]).is_err());
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
    }
}
