//! Structured-response shapes and their validation.
//!
//! Model replies are free text that must *contain* a JSON object — either
//! inside a ```json fenced block or as the first balanced `{...}` in the
//! text. Each [`SchemaTag`](super::SchemaTag) with a structured shape has a
//! typed parser here; [`validate`] is the boolean form the gateway uses to
//! decide whether to ask the model to repair its reply.

use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::gateway::SchemaTag;

/// A condition feature as the model writes it: `"*"` or a list of values.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum RawFeature {
    Star(String),
    Values(Vec<String>),
}

impl RawFeature {
    /// Check the `"*"` spelling; anything else string-valued is malformed.
    fn check(&self, field: &str) -> Result<()> {
        match self {
            RawFeature::Star(s) if s == "*" => Ok(()),
            RawFeature::Star(s) => Err(Error::MalformedOutput(format!(
                "feature {field}: expected \"*\" or an array, got {s:?}"
            ))),
            RawFeature::Values(_) => Ok(()),
        }
    }
}

/// The four feature dimensions of a generated condition.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct RawCondition {
    pub sql_keywords: RawFeature,
    pub tables: RawFeature,
    pub columns: RawFeature,
    pub data_types: RawFeature,
}

/// Payload for [`SchemaTag::TkRow`]: one knowledge statement plus its
/// applicability condition.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct TkRowPayload {
    pub knowledge: String,
    pub condition: RawCondition,
}

/// Payload for [`SchemaTag::Correction`]: either a single-clause edit with
/// its explanation, or a request to run an exploration query first.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum CorrectionPayload {
    Edit { sql: String, delta: String },
    Explore { explore: String },
}

/// Payload for [`SchemaTag::RequiredCorrections`] and
/// [`SchemaTag::FilterKnowledge`]: indices (into the presented list) to keep.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct KeptPayload {
    pub kept: Vec<usize>,
}

/// Payload for [`SchemaTag::NaiveKnowledge`]: one free-form statement.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct NaivePayload {
    pub statement: String,
}

/// Pull the JSON object out of a completion: a ```json fenced block wins,
/// otherwise the first balanced `{...}` outside string literals.
pub fn extract_json(text: &str) -> Result<Value> {
    let candidate = fenced_block(text)
        .or_else(|| balanced_object(text))
        .ok_or_else(|| Error::MalformedOutput("no JSON object found in reply".into()))?;
    serde_json::from_str(candidate)
        .map_err(|e| Error::MalformedOutput(format!("invalid JSON in reply: {e}")))
}

fn fenced_block(text: &str) -> Option<&str> {
    let start = text.find("```json")? + "```json".len();
    let rest = &text[start..];
    let end = rest.find("```")?;
    Some(rest[..end].trim())
}

fn balanced_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

fn non_empty(value: &str, field: &str) -> Result<()> {
    if value.trim().is_empty() {
        Err(Error::MalformedOutput(format!("{field} is empty")))
    } else {
        Ok(())
    }
}

fn parse_payload<T: for<'de> Deserialize<'de>>(text: &str, shape: &str) -> Result<T> {
    let value = extract_json(text)?;
    serde_json::from_value(value)
        .map_err(|e| Error::MalformedOutput(format!("reply does not match {shape}: {e}")))
}

/// Parse a tk-row reply.
pub fn parse_tk_row(text: &str) -> Result<TkRowPayload> {
    let payload: TkRowPayload = parse_payload(text, "{knowledge, condition{4 features}}")?;
    non_empty(&payload.knowledge, "knowledge")?;
    payload.condition.sql_keywords.check("sql_keywords")?;
    payload.condition.tables.check("tables")?;
    payload.condition.columns.check("columns")?;
    payload.condition.data_types.check("data_types")?;
    Ok(payload)
}

/// Parse a correction reply (edit or exploration request).
pub fn parse_correction(text: &str) -> Result<CorrectionPayload> {
    let payload: CorrectionPayload =
        parse_payload(text, "{sql, delta} or {explore}")?;
    match &payload {
        CorrectionPayload::Edit { sql, delta } => {
            non_empty(sql, "sql")?;
            non_empty(delta, "delta")?;
        }
        CorrectionPayload::Explore { explore } => non_empty(explore, "explore")?,
    }
    Ok(payload)
}

/// Parse a kept-indices reply (self-reflection or knowledge filtering).
pub fn parse_kept(text: &str) -> Result<KeptPayload> {
    parse_payload(text, "{kept: [indices]}")
}

/// Parse a naive-knowledge reply.
pub fn parse_naive(text: &str) -> Result<NaivePayload> {
    let payload: NaivePayload = parse_payload(text, "{statement}")?;
    non_empty(&payload.statement, "statement")?;
    Ok(payload)
}

/// Validate `text` against `tag` without keeping the parsed value.
pub fn validate(tag: SchemaTag, text: &str) -> Result<()> {
    match tag {
        SchemaTag::TkRow => parse_tk_row(text).map(|_| ()),
        SchemaTag::Correction => parse_correction(text).map(|_| ()),
        SchemaTag::RequiredCorrections | SchemaTag::FilterKnowledge => {
            parse_kept(text).map(|_| ())
        }
        SchemaTag::NaiveKnowledge => parse_naive(text).map(|_| ()),
        SchemaTag::AgentTurn | SchemaTag::Feedback => non_empty(text, "reply"),
    }
}
