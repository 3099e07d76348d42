//! Knowledge discovery: turn past agent mistakes into reusable knowledge
//! rows.
//!
//! Each experience carries a question, the (wrong) query an agent produced
//! for it, and the gold query. Discovery repairs the wrong query one clause
//! at a time — each accepted edit is a *correction statement* — then a
//! reflection pass keeps the edits that encode reusable insight, and each
//! kept edit is distilled into a knowledge statement plus a structured
//! applicability condition for the store.
//!
//! Repair is verified by execution: the loop ends when the repaired query's
//! result is equivalent to the gold result, or when the iteration budget
//! runs out. Rows are only produced from repairs that reached equivalence.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::AgentTrace;
use crate::error::{Error, Result};
use crate::exec::{equivalent, exec_sql, DatabaseHandle, ExecResult, Outcome};
use crate::gateway::schema::{parse_correction, parse_kept, parse_tk_row, CorrectionPayload, RawCondition, RawFeature};
use crate::gateway::{ChatMessage, ChatRequest, Gateway, SchemaTag};
use crate::prompts;
use crate::sql::catalog::{SchemaCatalog, TYPE_TAXONOMY};
use crate::sql::diff::clause_diff;
use crate::sql::features::{extract_features_lossy, is_vocabulary_keyword, KEYWORD_VOCABULARY};
use crate::store::{ApplicabilityCondition, FeatureSet, Provenance, TkStore};

/// One past mistake: a question, the agent's final (wrong) query, and the
/// gold query that answers it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceTuple {
    pub question_id: String,
    pub question: String,
    pub gold_sql: String,
    /// The agent's final query. Loading accepts either this field directly
    /// or a full `trace`, whose final SQL is used.
    pub agent_sql: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<AgentTrace>,
}

#[derive(Debug, Deserialize)]
struct RawTuple {
    question_id: String,
    question: String,
    gold_sql: String,
    #[serde(default)]
    agent_sql: Option<String>,
    #[serde(default)]
    trace: Option<AgentTrace>,
}

impl RawTuple {
    fn into_tuple(self, origin: &str) -> Result<ExperienceTuple> {
        let agent_sql = match (self.agent_sql, &self.trace) {
            (Some(sql), _) => sql,
            (None, Some(trace)) => trace
                .final_sql()
                .map(str::to_string)
                .ok_or_else(|| {
                    Error::Validation(format!(
                        "{origin}: tuple {} has a failed trace and no agent_sql",
                        self.question_id
                    ))
                })?,
            (None, None) => {
                return Err(Error::Validation(format!(
                    "{origin}: tuple {} has neither agent_sql nor trace",
                    self.question_id
                )))
            }
        };
        Ok(ExperienceTuple {
            question_id: self.question_id,
            question: self.question,
            gold_sql: self.gold_sql,
            agent_sql,
            trace: self.trace,
        })
    }
}

/// Load experience tuples from a JSON array file or a JSON-lines file.
pub fn load_experience(path: &Path) -> Result<Vec<ExperienceTuple>> {
    let text = fs::read_to_string(path)?;
    let origin = path.display().to_string();
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        let raws: Vec<RawTuple> = serde_json::from_str(trimmed)
            .map_err(|e| Error::Validation(format!("{origin}: {e}")))?;
        return raws.into_iter().map(|r| r.into_tuple(&origin)).collect();
    }
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawTuple = serde_json::from_str(line)
            .map_err(|e| Error::Validation(format!("{origin}:{}: {e}", lineno + 1)))?;
        out.push(raw.into_tuple(&format!("{origin}:{}", lineno + 1))?);
    }
    Ok(out)
}

/// One accepted single-clause repair edit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionStatement {
    /// The model's one-sentence account of the edit.
    pub delta: String,
    pub sql_before: String,
    pub sql_after: String,
    /// Whether the edit changed exactly one clause.
    pub atomic: bool,
    /// The clauses the edit changed, rendered as `segment:clause` tags.
    pub changed_clauses: Vec<String>,
}

/// How a repair attempt ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepairStatus {
    /// The agent query already matched the gold result; nothing to learn.
    AlreadyCorrect,
    /// The repaired query's result is equivalent to the gold result.
    Repaired,
    /// The iteration budget ran out before reaching equivalence.
    GaveUp,
}

/// Result of one repair loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairOutcome {
    pub status: RepairStatus,
    /// Repair iterations consumed (0 when already correct).
    pub iterations: usize,
    pub statements: Vec<CorrectionStatement>,
    /// The query the loop ended on.
    pub final_sql: String,
}

/// Discovery policy knobs.
#[derive(Debug, Clone)]
pub struct DiscoveryLimits {
    /// Repair iterations per tuple.
    pub max_iterations: usize,
    /// Exploration queries allowed within one repair iteration.
    pub explore_cap: usize,
    /// Re-ask once when an edit touches more than one clause; a second
    /// non-atomic edit is accepted but flagged. When false, multi-clause
    /// edits are accepted (flagged) without a re-ask.
    pub enforce_atomicity: bool,
    /// Distill kept edits into generalized knowledge via the LLM. When
    /// false (ablation), the edit text itself is stored verbatim with a
    /// condition derived mechanically from the corrected query's features.
    pub generalize: bool,
    /// Rows shown per execution-result preview.
    pub preview_rows: usize,
}

impl Default for DiscoveryLimits {
    fn default() -> Self {
        DiscoveryLimits {
            max_iterations: 8,
            explore_cap: 5,
            enforce_atomicity: true,
            generalize: true,
            preview_rows: 10,
        }
    }
}

/// One proposed edit, as accepted from the model within an iteration.
struct ProposedEdit {
    sql: String,
    delta: String,
}

/// Run one correction iteration: a fresh request carrying the current
/// draft, with an inner exploration loop. Returns the accepted edit, or
/// None when the iteration produced nothing usable.
fn one_iteration(
    question: &str,
    current: &str,
    current_result: &ExecResult,
    gold_result: &ExecResult,
    prior_deltas: &[String],
    system: &str,
    db: &DatabaseHandle,
    gateway: &Gateway,
    limits: &DiscoveryLimits,
) -> Result<Option<ProposedEdit>> {
    let mut messages = vec![
        ChatMessage::system(system),
        ChatMessage::user(prompts::make_correction_user(
            question,
            current,
            &current_result.preview(limits.preview_rows),
            &gold_result.preview(limits.preview_rows),
            prior_deltas,
        )),
    ];
    let mut explores = 0usize;
    loop {
        let resp = gateway.chat(
            ChatRequest::new(messages.clone()).with_schema(SchemaTag::Correction),
        )?;
        match parse_correction(&resp.text)? {
            CorrectionPayload::Edit { sql, delta } => {
                return Ok(Some(ProposedEdit { sql, delta }));
            }
            CorrectionPayload::Explore { explore } => {
                if explores >= limits.explore_cap {
                    log::warn!("exploration budget exhausted; iteration wasted");
                    return Ok(None);
                }
                explores += 1;
                let result = exec_sql(&explore, db);
                messages.push(ChatMessage::assistant(resp.text));
                messages.push(ChatMessage::user(prompts::exploration_result(
                    &result.preview(limits.preview_rows),
                )));
            }
        }
    }
}

/// Check an edit's clause footprint and, when it touches more than one
/// clause, re-ask once. Returns the edit to accept with its atomicity
/// verdict, or None when the edit cannot be diffed (unparsable SQL).
fn check_atomicity(
    current: &str,
    edit: ProposedEdit,
    system: &str,
    question: &str,
    current_result: &ExecResult,
    gold_result: &ExecResult,
    prior_deltas: &[String],
    gateway: &Gateway,
    limits: &DiscoveryLimits,
) -> Result<Option<(ProposedEdit, bool, Vec<String>)>> {
    let diff = match clause_diff(current, &edit.sql) {
        Ok(d) => d,
        Err(e) => {
            log::warn!("proposed edit does not parse, discarding: {e}");
            return Ok(None);
        }
    };
    if diff.is_empty() {
        log::warn!("proposed edit changes nothing, discarding");
        return Ok(None);
    }
    let tags: Vec<String> = diff.changed_clauses.iter().map(|t| t.to_string()).collect();
    if diff.is_atomic() || !limits.enforce_atomicity {
        return Ok(Some((edit, diff.is_atomic(), tags)));
    }

    // One re-ask, inside a request that shows the offending edit.
    let messages = vec![
        ChatMessage::system(system),
        ChatMessage::user(prompts::make_correction_user(
            question,
            current,
            &current_result.preview(limits.preview_rows),
            &gold_result.preview(limits.preview_rows),
            prior_deltas,
        )),
        ChatMessage::assistant(format!(
            "{{\"sql\": {}, \"delta\": {}}}",
            serde_json::to_string(&edit.sql).unwrap_or_default(),
            serde_json::to_string(&edit.delta).unwrap_or_default(),
        )),
        ChatMessage::user(prompts::atomicity_re_ask(&diff.describe())),
    ];
    let resp = gateway.chat(ChatRequest::new(messages).with_schema(SchemaTag::Correction))?;
    if let Ok(CorrectionPayload::Edit { sql, delta }) = parse_correction(&resp.text) {
        if let Ok(second) = clause_diff(current, &sql) {
            if !second.is_empty() {
                let second_tags: Vec<String> =
                    second.changed_clauses.iter().map(|t| t.to_string()).collect();
                // The model's latest intent wins; flag it if still broad.
                return Ok(Some((
                    ProposedEdit { sql, delta },
                    second.is_atomic(),
                    second_tags,
                )));
            }
        }
    }
    // Unusable re-ask reply: keep the original edit, flagged non-atomic.
    Ok(Some((edit, false, tags)))
}

/// Repair a wrong query one clause at a time until its result matches the
/// gold result, collecting the accepted edits.
pub fn get_correction_statements(
    question: &str,
    agent_sql: &str,
    gold_sql: &str,
    db: &DatabaseHandle,
    catalog: &SchemaCatalog,
    gateway: &Gateway,
    limits: &DiscoveryLimits,
) -> Result<RepairOutcome> {
    let gold_result = exec_sql(gold_sql, db);
    if matches!(gold_result.outcome, Outcome::Failure(_)) {
        return Err(Error::Validation(format!(
            "gold query does not execute: {}",
            gold_result.preview(1)
        )));
    }
    let mut current = agent_sql.to_string();
    let mut current_result = exec_sql(&current, db);
    if equivalent(&current_result, &gold_result).equivalent {
        return Ok(RepairOutcome {
            status: RepairStatus::AlreadyCorrect,
            iterations: 0,
            statements: Vec::new(),
            final_sql: current,
        });
    }

    let system = prompts::make_correction_system(&catalog.render());
    let mut statements: Vec<CorrectionStatement> = Vec::new();
    let mut deltas: Vec<String> = Vec::new();

    for iteration in 1..=limits.max_iterations {
        let Some(edit) = one_iteration(
            question,
            &current,
            &current_result,
            &gold_result,
            &deltas,
            &system,
            db,
            gateway,
            limits,
        )?
        else {
            continue;
        };
        let Some((accepted, atomic, changed)) = check_atomicity(
            &current,
            edit,
            &system,
            question,
            &current_result,
            &gold_result,
            &deltas,
            gateway,
            limits,
        )?
        else {
            continue;
        };
        statements.push(CorrectionStatement {
            delta: accepted.delta.clone(),
            sql_before: current.clone(),
            sql_after: accepted.sql.clone(),
            atomic,
            changed_clauses: changed,
        });
        deltas.push(accepted.delta);
        current = accepted.sql;
        current_result = exec_sql(&current, db);
        if equivalent(&current_result, &gold_result).equivalent {
            return Ok(RepairOutcome {
                status: RepairStatus::Repaired,
                iterations: iteration,
                statements,
                final_sql: current,
            });
        }
    }
    Ok(RepairOutcome {
        status: RepairStatus::GaveUp,
        iterations: limits.max_iterations,
        statements,
        final_sql: current,
    })
}

/// Self-reflection: keep only the edits that encode reusable insight.
/// An unusable reply keeps everything (conservative); transport and
/// budget errors propagate.
pub fn get_required_corrections(
    question: &str,
    original_sql: &str,
    final_sql: &str,
    statements: Vec<CorrectionStatement>,
    gateway: &Gateway,
) -> Result<Vec<CorrectionStatement>> {
    if statements.is_empty() {
        return Ok(statements);
    }
    let deltas: Vec<String> = statements.iter().map(|s| s.delta.clone()).collect();
    let request = ChatRequest::new(vec![
        ChatMessage::system(prompts::REQUIRED_CORRECTIONS_SYSTEM),
        ChatMessage::user(prompts::required_corrections_user(
            question,
            original_sql,
            final_sql,
            &deltas,
        )),
    ])
    .with_schema(SchemaTag::RequiredCorrections);
    let kept = match gateway.chat(request) {
        Ok(resp) => match parse_kept(&resp.text) {
            Ok(payload) => payload.kept,
            Err(_) => return Ok(statements),
        },
        Err(Error::MalformedOutput(_)) => return Ok(statements),
        Err(e) => return Err(e),
    };
    let mut indices: Vec<usize> = kept.into_iter().filter(|&i| i < statements.len()).collect();
    indices.sort_unstable();
    indices.dedup();
    let keep: std::collections::BTreeSet<usize> = indices.into_iter().collect();
    Ok(statements
        .into_iter()
        .enumerate()
        .filter_map(|(i, s)| keep.contains(&i).then_some(s))
        .collect())
}

/// Render the keyword vocabulary for prompts.
fn vocabulary_text() -> String {
    KEYWORD_VOCABULARY.join(", ")
}

/// Render the type taxonomy for prompts.
fn taxonomy_text() -> String {
    TYPE_TAXONOMY
        .iter()
        .map(|t| t.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Convert one raw feature into a validated [`FeatureSet`]. Any entry the
/// validator does not accept degrades the whole feature to the wildcard —
/// an over-broad condition can only over-retrieve, never hide knowledge.
fn sanitize_feature<F>(raw: &RawFeature, field: &str, valid: F) -> FeatureSet
where
    F: Fn(&str) -> bool,
{
    match raw {
        RawFeature::Star(_) => FeatureSet::Wildcard,
        RawFeature::Values(vs) => {
            if vs.is_empty() {
                return FeatureSet::Wildcard;
            }
            let lowered: Vec<String> = vs.iter().map(|v| v.trim().to_lowercase()).collect();
            if lowered.iter().any(|v| v.is_empty() || !valid(v)) {
                log::warn!("condition {field} contains unknown values {vs:?}; widening to *");
                return FeatureSet::Wildcard;
            }
            FeatureSet::values(lowered).unwrap_or(FeatureSet::Wildcard)
        }
    }
}

/// Validate a model-written condition against the vocabulary, taxonomy,
/// and schema catalog.
fn sanitize_condition(raw: &RawCondition, catalog: &SchemaCatalog) -> ApplicabilityCondition {
    ApplicabilityCondition {
        sql_keywords: sanitize_feature(&raw.sql_keywords, "sql_keywords", is_vocabulary_keyword),
        tables: sanitize_feature(&raw.tables, "tables", |t| catalog.has_table(t)),
        columns: sanitize_feature(&raw.columns, "columns", |c| {
            !catalog.tables_with_column(c).is_empty()
        }),
        data_types: sanitize_feature(&raw.data_types, "data_types", |d| {
            crate::sql::catalog::TypeTag::parse(d).is_some()
        }),
    }
}

/// Distill one kept edit into a knowledge statement and its applicability
/// condition (a single LLM call producing both).
pub fn gen_tk_row(
    question: &str,
    statement: &CorrectionStatement,
    catalog: &SchemaCatalog,
    gateway: &Gateway,
) -> Result<(String, ApplicabilityCondition)> {
    let request = ChatRequest::new(vec![
        ChatMessage::system(prompts::gen_tk_row_system(
            &vocabulary_text(),
            &taxonomy_text(),
        )),
        ChatMessage::user(prompts::gen_tk_row_user(
            question,
            &statement.delta,
            &statement.sql_before,
            &statement.sql_after,
            &catalog.render(),
        )),
    ])
    .with_schema(SchemaTag::TkRow);
    let resp = gateway.chat(request)?;
    let payload = parse_tk_row(&resp.text)?;
    let knowledge = payload.knowledge.trim().to_string();
    if knowledge.is_empty() {
        return Err(Error::MalformedOutput(
            "knowledge statement is empty".to_string(),
        ));
    }
    Ok((knowledge, sanitize_condition(&payload.condition, catalog)))
}

/// Mechanical fallback for the non-generalized ablation: the condition is
/// the corrected query's own features, with empty dimensions widened.
fn mechanical_condition(sql_after: &str, catalog: &SchemaCatalog) -> ApplicabilityCondition {
    let features =
        extract_features_lossy(sql_after, catalog, &std::collections::BTreeSet::new());
    let lift = |set: &std::collections::BTreeSet<String>| {
        if set.is_empty() {
            FeatureSet::Wildcard
        } else {
            FeatureSet::Values(set.clone())
        }
    };
    ApplicabilityCondition {
        sql_keywords: lift(&features.sql_keywords),
        tables: lift(&features.tables),
        columns: lift(&features.columns),
        data_types: lift(&features.data_types),
    }
}

/// Per-tuple outcome of a populate run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TupleStatus {
    AlreadyCorrect,
    Repaired,
    GaveUp,
    /// The gold query itself does not execute; nothing can be learned.
    GoldFailed,
    /// An LLM or I/O failure interrupted this tuple.
    Error,
}

/// What happened to one experience tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleReport {
    pub question_id: String,
    pub status: TupleStatus,
    pub iterations: usize,
    pub corrections_proposed: usize,
    pub corrections_kept: usize,
    pub rows_inserted: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Summary of a populate run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryReport {
    pub tuples: Vec<TupleReport>,
    pub rows_inserted: usize,
}

impl DiscoveryReport {
    pub fn count(&self, status: TupleStatus) -> usize {
        self.tuples.iter().filter(|t| t.status == status).count()
    }
}

/// Run discovery over a batch of experience tuples, inserting the resulting
/// knowledge rows into the store. Per-tuple failures are recorded and do
/// not abort the batch.
pub fn populate(
    tuples: &[ExperienceTuple],
    db: &DatabaseHandle,
    catalog: &SchemaCatalog,
    store: &mut TkStore,
    gateway: &Gateway,
    limits: &DiscoveryLimits,
) -> Result<DiscoveryReport> {
    let mut reports = Vec::with_capacity(tuples.len());
    let mut total_rows = 0usize;
    for tuple in tuples {
        let report = populate_one(tuple, db, catalog, store, gateway, limits);
        total_rows += report.rows_inserted;
        reports.push(report);
    }
    Ok(DiscoveryReport {
        tuples: reports,
        rows_inserted: total_rows,
    })
}

fn populate_one(
    tuple: &ExperienceTuple,
    db: &DatabaseHandle,
    catalog: &SchemaCatalog,
    store: &mut TkStore,
    gateway: &Gateway,
    limits: &DiscoveryLimits,
) -> TupleReport {
    let mut report = TupleReport {
        question_id: tuple.question_id.clone(),
        status: TupleStatus::Error,
        iterations: 0,
        corrections_proposed: 0,
        corrections_kept: 0,
        rows_inserted: 0,
        error: None,
    };
    let gold_result = exec_sql(&tuple.gold_sql, db);
    if let Outcome::Failure(msg) = &gold_result.outcome {
        report.status = TupleStatus::GoldFailed;
        report.error = Some(msg.clone());
        return report;
    }
    let outcome = match get_correction_statements(
        &tuple.question,
        &tuple.agent_sql,
        &tuple.gold_sql,
        db,
        catalog,
        gateway,
        limits,
    ) {
        Ok(o) => o,
        Err(e) => {
            report.error = Some(e.to_string());
            return report;
        }
    };
    report.iterations = outcome.iterations;
    report.corrections_proposed = outcome.statements.len();
    report.status = match outcome.status {
        RepairStatus::AlreadyCorrect => TupleStatus::AlreadyCorrect,
        RepairStatus::Repaired => TupleStatus::Repaired,
        RepairStatus::GaveUp => TupleStatus::GaveUp,
    };
    // Only verified repairs yield knowledge: an unrepaired edit chain was
    // never confirmed against the gold result.
    if outcome.status != RepairStatus::Repaired {
        return report;
    }

    let kept = match get_required_corrections(
        &tuple.question,
        &tuple.agent_sql,
        &outcome.final_sql,
        outcome.statements,
        gateway,
    ) {
        Ok(k) => k,
        Err(e) => {
            report.status = TupleStatus::Error;
            report.error = Some(e.to_string());
            return report;
        }
    };
    report.corrections_kept = kept.len();

    for statement in &kept {
        let generated = if limits.generalize {
            gen_tk_row(&tuple.question, statement, catalog, gateway)
        } else {
            Ok((
                statement.delta.clone(),
                mechanical_condition(&statement.sql_after, catalog),
            ))
        };
        match generated {
            Ok((knowledge, condition)) => {
                let provenance = Provenance {
                    source_question_id: tuple.question_id.clone(),
                    correction_statement: statement.delta.clone(),
                    created_at: chrono::Utc::now()
                        .to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                    non_atomic: !statement.atomic,
                };
                match store.insert(&knowledge, condition, provenance) {
                    Ok(_) => report.rows_inserted += 1,
                    Err(e) => {
                        report.error.get_or_insert_with(|| e.to_string());
                    }
                }
            }
            Err(e) => {
                log::warn!(
                    "knowledge generation failed for {}: {e}",
                    tuple.question_id
                );
                report.error.get_or_insert_with(|| e.to_string());
            }
        }
    }
    report
}
