//! The answer agents: a base explore/answer loop over SQLite, and its
//! knowledge-augmented form that solicits per-CTE corrective feedback from
//! the knowledge store after the agent first declares an answer final.
//!
//! The wire format is plain text: each agent turn must carry a status line
//! (`status: explore` or `status: final`) and exactly one fenced SQL block.
//! A missing status defaults to final (one-shot answers); a missing SQL
//! block is a format error the agent is asked to repair a bounded number of
//! times.
//!
//! The agent context is **append-only**: every turn's SQL and execution
//! result, and every feedback injection, is appended; nothing is rewritten.
//! Feedback rounds are capped at `2 × (CTE count of the first final draft)
//! + 2`, so a run makes at most `max_turns + feedback cap` agent calls.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{exec_sql, DatabaseHandle, ExecResult};
use crate::gateway::{ChatMessage, ChatRequest, Gateway, SchemaTag};
use crate::prompts;
use crate::sql::catalog::SchemaCatalog;
use crate::sql::cte::split_ctes;
use crate::store::{RetrievalQuery, TkStore};

/// What a context segment is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentKind {
    Question,
    Sql,
    ExecResult,
    Feedback,
}

/// One appended piece of agent context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSegment {
    pub kind: SegmentKind,
    pub text: String,
}

/// Append-only conversation state rendered into the user message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentContext {
    segments: Vec<ContextSegment>,
}

impl AgentContext {
    pub fn new(question: &str) -> Self {
        AgentContext {
            segments: vec![ContextSegment {
                kind: SegmentKind::Question,
                text: question.to_string(),
            }],
        }
    }

    pub fn push(&mut self, kind: SegmentKind, text: impl Into<String>) {
        self.segments.push(ContextSegment {
            kind,
            text: text.into(),
        });
    }

    pub fn segments(&self) -> &[ContextSegment] {
        &self.segments
    }

    /// True when `self` extends `prefix` without rewriting it.
    pub fn extends(&self, prefix: &AgentContext) -> bool {
        self.segments.len() >= prefix.segments.len()
            && self.segments[..prefix.segments.len()] == prefix.segments[..]
    }

    /// Stable textual rendering used as the user message.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            if !out.is_empty() {
                out.push_str("\n\n");
            }
            match seg.kind {
                SegmentKind::Question => {
                    out.push_str("Question: ");
                    out.push_str(&seg.text);
                }
                SegmentKind::Sql => {
                    out.push_str("My query:\n```sql\n");
                    out.push_str(&seg.text);
                    out.push_str("\n```");
                }
                SegmentKind::ExecResult => {
                    out.push_str("Result:\n");
                    out.push_str(&seg.text);
                }
                SegmentKind::Feedback => {
                    out.push_str("Feedback: ");
                    out.push_str(&seg.text);
                }
            }
        }
        out
    }

    /// Estimated prompt tokens for the rendered context.
    pub fn token_estimate(&self) -> u64 {
        crate::gateway::token_estimate(&self.render())
    }
}

/// One agent turn: what was emitted and what happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTurn {
    pub index: usize,
    pub emitted_sql: String,
    pub is_final: bool,
    pub exec_result: ExecResult,
    /// The feedback this turn was reacting to, when any.
    pub feedback_injected: Option<String>,
}

/// How a trace ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceStatus {
    /// The agent declared its answer final.
    Final,
    /// The turn budget ran out; the last emitted SQL stands as the answer.
    ForcedFinal,
    /// No parsable SQL was produced; the run counts as incorrect.
    Failed,
}

/// Full record of one agent run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrace {
    pub turns: Vec<AgentTurn>,
    pub final_sql: String,
    pub status: TraceStatus,
    /// Logical LLM calls attributable to this run (exact when the caller
    /// passes a freshly forked gateway).
    pub llm_calls: u64,
    /// Wall-clock ms spent in the LLM for this run (same caveat).
    pub wall_ms: u64,
}

impl AgentTrace {
    /// Synthetic single-turn trace around a known final query (hand-built
    /// experience records, replay tooling).
    pub fn single(final_sql: &str, exec_result: ExecResult) -> Self {
        AgentTrace {
            turns: vec![AgentTurn {
                index: 0,
                emitted_sql: final_sql.to_string(),
                is_final: true,
                exec_result,
                feedback_injected: None,
            }],
            final_sql: final_sql.to_string(),
            status: TraceStatus::Final,
            llm_calls: 0,
            wall_ms: 0,
        }
    }

    /// The one final SQL of a non-failed trace.
    pub fn final_sql(&self) -> Option<&str> {
        match self.status {
            TraceStatus::Failed => None,
            _ => Some(&self.final_sql),
        }
    }
}

/// Agent policy knobs.
#[derive(Debug, Clone)]
pub struct AgentLimits {
    /// Maximum agent turns (explore + final + revisions).
    pub max_turns: usize,
    /// Feedback rounds allowed per CTE of the first final draft.
    pub feedback_per_cte: usize,
    /// Constant addend of the feedback-round cap.
    pub feedback_base: usize,
    /// Repair attempts when a reply has no parsable SQL.
    pub format_retries: usize,
    /// Rows shown per execution-result preview.
    pub preview_rows: usize,
    /// Follow the literal feedback loop shape: the agent is re-invoked
    /// after every feedback computation, even an empty one, and an empty
    /// feedback ends the loop. The default (false) skips agent calls for
    /// empty feedback and keeps scanning the remaining CTEs.
    pub strict_feedback_loop: bool,
}

impl Default for AgentLimits {
    fn default() -> Self {
        AgentLimits {
            max_turns: 20,
            feedback_per_cte: 2,
            feedback_base: 2,
            format_retries: 2,
            preview_rows: 10,
            strict_feedback_loop: false,
        }
    }
}

/// Where knowledge comes from in an augmented run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KnowledgeScope {
    /// No knowledge at all (control).
    Zero,
    /// Whole store, bypassing matching (sensitivity control).
    All,
    /// Condition-matched and LLM-filtered (the system proper).
    Scoped,
}

/// What retrieval keys on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrievalSource {
    /// Similarity between the question and knowledge statements.
    Question,
    /// Feature match against the whole draft query.
    WholeSql,
    /// Feature match against one CTE at a time.
    Cte,
}

/// Where knowledge is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InjectionPoint {
    /// Into the initial context, before any generation.
    Initial,
    /// One feedback round over the whole draft.
    WholeSql,
    /// Per-CTE feedback rounds (the system proper).
    Cte,
}

/// Options for an augmented run.
#[derive(Debug, Clone)]
pub struct AugmentOptions {
    pub scope: KnowledgeScope,
    pub source: RetrievalSource,
    pub injection: InjectionPoint,
    /// Statement budget for question-similarity retrieval and initial
    /// injection.
    pub top_k: usize,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        AugmentOptions {
            scope: KnowledgeScope::Scoped,
            source: RetrievalSource::Cte,
            injection: InjectionPoint::Cte,
            top_k: 5,
        }
    }
}

/// Result of an augmented run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedRun {
    pub trace: AgentTrace,
    /// Statements retrieved per feedback probe, in probe order.
    pub retrieved_counts: Vec<usize>,
    /// Feedback rounds that actually re-invoked the agent.
    pub feedback_rounds: usize,
}

/// Parse one agent reply into (sql, is_final).
///
/// Accepts `status: final` / `status: explore` lines (bare `final` /
/// `explore` lines too); a missing status means final. The SQL is the first
/// sql-tagged fenced block, or a generic fenced block / the whole reply when
/// it plainly starts with SELECT or WITH.
pub fn parse_agent_reply(text: &str) -> Result<(String, bool)> {
    let mut status: Option<bool> = None;
    for line in text.lines() {
        let l = line.trim().to_ascii_lowercase();
        let verdict = l
            .strip_prefix("status:")
            .map(|rest| rest.trim().to_string())
            .or_else(|| {
                (l == "final" || l == "explore").then(|| l.clone())
            });
        match verdict.as_deref() {
            Some("final") => {
                status = Some(true);
                break;
            }
            Some("explore") => {
                status = Some(false);
                break;
            }
            _ => {}
        }
    }
    let sql = extract_sql(text).ok_or(Error::NoSqlEmitted)?;
    Ok((sql, status.unwrap_or(true)))
}

fn find_ci(haystack: &str, needle: &str, from: usize) -> Option<usize> {
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    if n.is_empty() || h.len() < n.len() {
        return None;
    }
    (from..=h.len() - n.len()).find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

fn extract_sql(text: &str) -> Option<String> {
    // Preferred: a ```sql fence.
    if let Some(start) = find_ci(text, "```sql", 0) {
        let body_start = start + "```sql".len();
        if let Some(end) = text[body_start..].find("```") {
            let sql = text[body_start..body_start + end].trim();
            if !sql.is_empty() {
                return Some(sql.to_string());
            }
        }
    }
    // Generic fence whose body looks like a query.
    if let Some(start) = text.find("```") {
        let body_start = start + 3;
        if let Some(end) = text[body_start..].find("```") {
            let body = text[body_start..body_start + end].trim();
            if starts_like_query(body) {
                return Some(body.to_string());
            }
        }
    }
    // Bare reply that is itself a query.
    let trimmed = text.trim();
    if starts_like_query(trimmed) {
        return Some(trimmed.to_string());
    }
    None
}

fn starts_like_query(text: &str) -> bool {
    let l = text.trim_start().to_ascii_lowercase();
    l.starts_with("select") || l.starts_with("with")
}

enum RunEnd {
    Final,
    Forced,
    Failed,
}

struct Runner<'a> {
    db: &'a DatabaseHandle,
    gateway: &'a Gateway,
    limits: &'a AgentLimits,
    system: String,
    ctx: AgentContext,
    turns: Vec<AgentTurn>,
    pending_feedback: Option<String>,
}

impl<'a> Runner<'a> {
    fn new(
        question: &str,
        system: String,
        db: &'a DatabaseHandle,
        gateway: &'a Gateway,
        limits: &'a AgentLimits,
    ) -> Self {
        Runner {
            db,
            gateway,
            limits,
            system,
            ctx: AgentContext::new(question),
            turns: Vec::new(),
            pending_feedback: None,
        }
    }

    /// One agent call plus bounded format-repair retries.
    fn step(&mut self) -> Result<Option<(String, bool)>> {
        let mut messages = vec![
            ChatMessage::system(self.system.clone()),
            ChatMessage::user(self.ctx.render()),
        ];
        for _ in 0..=self.limits.format_retries {
            let resp = self
                .gateway
                .chat(ChatRequest::new(messages.clone()).with_schema(SchemaTag::AgentTurn))?;
            match parse_agent_reply(&resp.text) {
                Ok(parsed) => return Ok(Some(parsed)),
                Err(_) => {
                    messages.push(ChatMessage::assistant(resp.text));
                    messages.push(ChatMessage::user(prompts::AGENT_FORMAT_REMINDER));
                }
            }
        }
        Ok(None)
    }

    /// Drive the loop until the agent declares final, the turn budget runs
    /// out (forced final), or it keeps replying unparsably (failed).
    fn run_to_final(&mut self) -> Result<RunEnd> {
        while self.turns.len() < self.limits.max_turns {
            let Some((sql, is_final)) = self.step()? else {
                return Ok(RunEnd::Failed);
            };
            let result = exec_sql(&sql, self.db);
            self.turns.push(AgentTurn {
                index: self.turns.len(),
                emitted_sql: sql.clone(),
                is_final,
                exec_result: result.clone(),
                feedback_injected: self.pending_feedback.take(),
            });
            self.ctx.push(SegmentKind::Sql, sql);
            self.ctx
                .push(SegmentKind::ExecResult, result.preview(self.limits.preview_rows));
            if is_final {
                return Ok(RunEnd::Final);
            }
        }
        if self.turns.is_empty() {
            Ok(RunEnd::Failed)
        } else {
            Ok(RunEnd::Forced)
        }
    }

    fn into_trace(self, end: RunEnd, calls: u64, wall_ms: u64) -> AgentTrace {
        let (status, final_sql) = match end {
            RunEnd::Final => (
                TraceStatus::Final,
                self.turns.last().map(|t| t.emitted_sql.clone()).unwrap_or_default(),
            ),
            RunEnd::Forced => (
                TraceStatus::ForcedFinal,
                self.turns.last().map(|t| t.emitted_sql.clone()).unwrap_or_default(),
            ),
            RunEnd::Failed => (TraceStatus::Failed, String::new()),
        };
        AgentTrace {
            turns: self.turns,
            final_sql,
            status,
            llm_calls: calls,
            wall_ms,
        }
    }
}

/// Run the base agent on one question.
pub fn run_base_agent(
    question: &str,
    db: &DatabaseHandle,
    catalog: &SchemaCatalog,
    gateway: &Gateway,
    limits: &AgentLimits,
) -> Result<AgentTrace> {
    run_agent_with_preamble(question, None, db, catalog, gateway, limits)
}

/// Run the base agent with optional notes (memory-baseline retrievals)
/// placed into the initial context before any generation.
pub fn run_agent_with_preamble(
    question: &str,
    preamble: Option<&str>,
    db: &DatabaseHandle,
    catalog: &SchemaCatalog,
    gateway: &Gateway,
    limits: &AgentLimits,
) -> Result<AgentTrace> {
    let calls0 = gateway.call_count();
    let ms0 = gateway.elapsed_ms();
    let mut runner = Runner::new(
        question,
        prompts::base_agent_system(&catalog.render()),
        db,
        gateway,
        limits,
    );
    if let Some(text) = preamble {
        if !text.is_empty() {
            runner.ctx.push(SegmentKind::Feedback, text);
        }
    }
    let end = runner.run_to_final()?;
    Ok(runner.into_trace(end, gateway.call_count() - calls0, gateway.elapsed_ms() - ms0))
}

/// Knowledge statements for one probe, per scope and source.
fn knowledge_for(
    scope: KnowledgeScope,
    source: RetrievalSource,
    question: &str,
    whole_sql: &str,
    segment_sql: &str,
    sibling_ctes: &BTreeSet<String>,
    store: &TkStore,
    catalog: &SchemaCatalog,
    gateway: &Gateway,
    top_k: usize,
) -> Result<Vec<String>> {
    match scope {
        KnowledgeScope::Zero => Ok(Vec::new()),
        KnowledgeScope::All => Ok(store.rows().iter().map(|r| r.knowledge.clone()).collect()),
        KnowledgeScope::Scoped => match source {
            RetrievalSource::Question => {
                let mut scored: Vec<(f64, usize, String)> = Vec::new();
                for (i, row) in store.rows().iter().enumerate() {
                    let sim = gateway.emb_sim(question, &row.knowledge)?;
                    scored.push((sim, i, row.knowledge.clone()));
                }
                scored.sort_by(|a, b| {
                    b.0.partial_cmp(&a.0)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.1.cmp(&b.1))
                });
                Ok(scored.into_iter().take(top_k).map(|(_, _, k)| k).collect())
            }
            RetrievalSource::WholeSql => {
                let hits = store.retrieve(
                    &RetrievalQuery {
                        sql: whole_sql,
                        question: Some(question),
                        exclude_relations: BTreeSet::new(),
                    },
                    catalog,
                    gateway,
                )?;
                Ok(hits.into_iter().map(|h| h.knowledge).collect())
            }
            RetrievalSource::Cte => {
                let hits = store.retrieve(
                    &RetrievalQuery {
                        sql: segment_sql,
                        question: Some(question),
                        exclude_relations: sibling_ctes.clone(),
                    },
                    catalog,
                    gateway,
                )?;
                Ok(hits.into_iter().map(|h| h.knowledge).collect())
            }
        },
    }
}

/// Summarize statements into feedback for one draft part. Empty statements
/// mean empty feedback (no LLM call); LLM failures degrade to empty.
fn feedback_text(
    question: &str,
    segment_name: Option<&str>,
    segment_sql: &str,
    statements: &[String],
    gateway: &Gateway,
) -> String {
    if statements.is_empty() {
        return String::new();
    }
    let request = ChatRequest::new(vec![
        ChatMessage::system(prompts::FEEDBACK_SYSTEM),
        ChatMessage::user(prompts::feedback_user(
            question,
            segment_name,
            segment_sql,
            statements,
        )),
    ])
    .with_schema(SchemaTag::Feedback);
    match gateway.chat(request) {
        Ok(resp) => resp.text.trim().to_string(),
        Err(e) => {
            log::warn!("feedback call failed, continuing without: {e}");
            String::new()
        }
    }
}

/// Segments of the current draft for feedback purposes: real CTE segments
/// in Cte mode, the whole draft as one unnamed segment otherwise (including
/// when the draft does not parse).
fn feedback_segments(draft: &str, injection: InjectionPoint) -> Vec<(Option<String>, String)> {
    if injection == InjectionPoint::Cte {
        if let Ok(segs) = split_ctes(draft) {
            return segs
                .into_iter()
                .map(|s| (s.name, s.sql_text))
                .collect();
        }
    }
    vec![(None, draft.to_string())]
}

/// Run the knowledge-augmented agent on one question.
pub fn run_augmented_agent(
    question: &str,
    db: &DatabaseHandle,
    catalog: &SchemaCatalog,
    store: &TkStore,
    gateway: &Gateway,
    limits: &AgentLimits,
    opts: &AugmentOptions,
) -> Result<AugmentedRun> {
    let calls0 = gateway.call_count();
    let ms0 = gateway.elapsed_ms();
    let mut runner = Runner::new(
        question,
        prompts::augmented_agent_system(&catalog.render()),
        db,
        gateway,
        limits,
    );
    let mut retrieved_counts: Vec<usize> = Vec::new();
    let mut feedback_rounds = 0usize;

    // Initial injection: knowledge goes in before any generation.
    if opts.injection == InjectionPoint::Initial {
        let statements = knowledge_for(
            opts.scope,
            opts.source,
            question,
            "",
            "",
            &BTreeSet::new(),
            store,
            catalog,
            gateway,
            opts.top_k,
        )?;
        retrieved_counts.push(statements.len());
        if !statements.is_empty() {
            runner
                .ctx
                .push(SegmentKind::Feedback, prompts::knowledge_preamble(&statements));
        }
        let end = runner.run_to_final()?;
        let trace =
            runner.into_trace(end, gateway.call_count() - calls0, gateway.elapsed_ms() - ms0);
        return Ok(AugmentedRun {
            trace,
            retrieved_counts,
            feedback_rounds,
        });
    }

    let mut end = runner.run_to_final()?;
    if matches!(end, RunEnd::Final) {
        let mut draft = runner
            .turns
            .last()
            .map(|t| t.emitted_sql.clone())
            .unwrap_or_default();
        let initial_segments = feedback_segments(&draft, opts.injection);
        let round_cap = limits.feedback_per_cte * initial_segments.len() + limits.feedback_base;
        let mut i = 0usize;

        loop {
            let segments = feedback_segments(&draft, opts.injection);
            if i >= segments.len() || feedback_rounds >= round_cap {
                break;
            }
            let (name, seg_sql) = &segments[i];
            let siblings: BTreeSet<String> = segments
                .iter()
                .filter_map(|(n, _)| n.clone())
                .filter(|n| Some(n) != name.as_ref())
                .collect();
            let statements = knowledge_for(
                opts.scope,
                opts.source,
                question,
                &draft,
                seg_sql,
                &siblings,
                store,
                catalog,
                gateway,
                opts.top_k,
            )?;
            retrieved_counts.push(statements.len());
            let feedback =
                feedback_text(question, name.as_deref(), seg_sql, &statements, gateway);

            if feedback.is_empty() {
                if limits.strict_feedback_loop {
                    // Literal loop shape: empty feedback ends the phase.
                    break;
                }
                i += 1;
                continue;
            }

            runner.ctx.push(SegmentKind::Feedback, feedback.clone());
            runner.pending_feedback = Some(feedback);
            feedback_rounds += 1;
            end = runner.run_to_final()?;
            match end {
                RunEnd::Final => {
                    draft = runner
                        .turns
                        .last()
                        .map(|t| t.emitted_sql.clone())
                        .unwrap_or_default();
                }
                // Budget exhausted or agent broke down: stop soliciting.
                RunEnd::Forced | RunEnd::Failed => break,
            }
            i += 1;
        }
    }

    let trace = runner.into_trace(end, gateway.call_count() - calls0, gateway.elapsed_ms() - ms0);
    Ok(AugmentedRun {
        trace,
        retrieved_counts,
        feedback_rounds,
    })
}
