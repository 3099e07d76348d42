//! Deterministic scripted backend for offline runs and tests.
//!
//! Responses are organized into per-tag tables (one per schema tag, plus a
//! `default` table for untagged calls). A table is a list of
//! `{fingerprint, response_text}` records, matched against the request's
//! **last user message**:
//!
//! 1. A record whose fingerprint equals the canonical fingerprint
//!    `"<tag>:<first-16-hex-of-sha256(last user message)>"` matches exactly.
//! 2. Otherwise the fingerprint is treated as a `||`-separated list of
//!    substrings that must all occur in the message. Among matching records
//!    the winner has the most parts, then the latest final occurrence in
//!    the message (so keys anchored on recently appended context beat keys
//!    anchored on the original question), then the longest total key; ties
//!    keep file order.
//! 3. A record with fingerprint `"*"` is the table's fallback.
//!
//! The tag table is consulted first, then the `default` table. A miss is a
//! transport error carrying the canonical fingerprint and a message tail so
//! script authors can add the missing record.
//!
//! Embeddings are deterministic: an explicit `{embed_text, vector}` record
//! wins; any other text hashes to a seeded unit vector, so similarity is
//! symmetric and self-similarity is 1.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gateway::{Backend, ChatRequest, EmbeddingVector, Role, SchemaTag};

/// One scripted chat response.
#[derive(Debug, Clone)]
pub struct ScriptRecord {
    pub fingerprint: String,
    pub response_text: String,
}

/// Raw line shape in a script file: a response or an embedding record.
#[derive(Debug, Deserialize)]
struct RawLine {
    fingerprint: Option<String>,
    response_text: Option<String>,
    embed_text: Option<String>,
    vector: Option<Vec<f64>>,
}

/// Table name used for untagged chat calls.
pub const DEFAULT_TABLE: &str = "default";

/// Dimension of hash-derived embeddings.
const DERIVED_DIM: usize = 16;

#[derive(Default)]
pub struct ScriptedBackend {
    tables: BTreeMap<String, Vec<ScriptRecord>>,
    embeddings: BTreeMap<String, Vec<f64>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        ScriptedBackend::default()
    }

    /// Test/builder API: add one response record.
    pub fn with_response(
        mut self,
        tag: Option<SchemaTag>,
        fingerprint: impl Into<String>,
        response_text: impl Into<String>,
    ) -> Self {
        self.push_record(
            tag.map(|t| t.as_str().to_string())
                .unwrap_or_else(|| DEFAULT_TABLE.to_string()),
            ScriptRecord {
                fingerprint: fingerprint.into(),
                response_text: response_text.into(),
            },
        );
        self
    }

    /// Test/builder API: pin the embedding for one exact text.
    pub fn with_embedding(mut self, text: impl Into<String>, vector: Vec<f64>) -> Self {
        self.embeddings.insert(text.into().trim().to_string(), vector);
        self
    }

    fn push_record(&mut self, table: String, record: ScriptRecord) {
        self.tables.entry(table).or_default().push(record);
    }

    /// Load one script file into `table` (a schema tag name or
    /// [`DEFAULT_TABLE`]). Lines are JSON records; `{embed_text, vector}`
    /// lines pin embeddings, everything else must be
    /// `{fingerprint, response_text}`.
    pub fn add_file(&mut self, table: &str, path: &Path) -> Result<()> {
        let file = std::fs::File::open(path)?;
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let at = || format!("{}:{}", path.display(), lineno + 1);
            let raw: RawLine = serde_json::from_str(&line)
                .map_err(|e| Error::Validation(format!("{}: bad script record: {e}", at())))?;
            match raw {
                RawLine {
                    embed_text: Some(text),
                    vector: Some(vector),
                    ..
                } => {
                    if vector.is_empty() || vector.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Validation(format!(
                            "{}: embedding vector must be non-empty and finite",
                            at()
                        )));
                    }
                    self.embeddings.insert(text.trim().to_string(), vector);
                }
                RawLine {
                    fingerprint: Some(fingerprint),
                    response_text: Some(response_text),
                    ..
                } => {
                    if fingerprint.is_empty() {
                        return Err(Error::Validation(format!("{}: empty fingerprint", at())));
                    }
                    self.push_record(
                        table.to_string(),
                        ScriptRecord {
                            fingerprint,
                            response_text,
                        },
                    );
                }
                _ => {
                    return Err(Error::Validation(format!(
                        "{}: record needs fingerprint+response_text or embed_text+vector",
                        at()
                    )))
                }
            }
        }
        Ok(())
    }

    fn resolve<'a>(&'a self, table: &str, message: &str, canonical: &str) -> Option<&'a str> {
        let records = self.tables.get(table)?;
        if let Some(r) = records.iter().find(|r| r.fingerprint == canonical) {
            return Some(&r.response_text);
        }
        // Best substring match: most parts, then latest final occurrence,
        // then longest key; file order breaks remaining ties.
        let mut best: Option<(usize, usize, usize, &ScriptRecord)> = None;
        for r in records {
            if r.fingerprint == "*" {
                continue;
            }
            let parts: Vec<&str> = r.fingerprint.split("||").collect();
            if parts.iter().any(|p| p.is_empty()) {
                continue;
            }
            let mut max_end = 0usize;
            let mut all = true;
            for p in &parts {
                match message.rfind(p) {
                    Some(pos) => max_end = max_end.max(pos + p.len()),
                    None => {
                        all = false;
                        break;
                    }
                }
            }
            if !all {
                continue;
            }
            let score = (parts.len(), max_end, r.fingerprint.len());
            if best
                .as_ref()
                .map(|(a, b, c, _)| score > (*a, *b, *c))
                .unwrap_or(true)
            {
                best = Some((score.0, score.1, score.2, r));
            }
        }
        if let Some((_, _, _, r)) = best {
            return Some(&r.response_text);
        }
        records
            .iter()
            .find(|r| r.fingerprint == "*")
            .map(|r| r.response_text.as_str())
    }
}

/// First 16 hex chars of sha256(text).
pub fn message_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// The canonical fingerprint for a (tag, last user message) pair.
pub fn canonical_fingerprint(tag: Option<SchemaTag>, last_user_message: &str) -> String {
    let tag_name = tag.map(|t| t.as_str()).unwrap_or(DEFAULT_TABLE);
    format!("{tag_name}:{}", message_hash(last_user_message))
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let message = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .or_else(|| request.messages.last())
            .map(|m| m.text.as_str())
            .unwrap_or_default();
        let canonical = canonical_fingerprint(request.schema, message);
        let tag_table = request
            .schema
            .map(|t| t.as_str())
            .unwrap_or(DEFAULT_TABLE);

        if let Some(text) = self.resolve(tag_table, message, &canonical) {
            return Ok(text.to_string());
        }
        if tag_table != DEFAULT_TABLE {
            if let Some(text) = self.resolve(DEFAULT_TABLE, message, &canonical) {
                return Ok(text.to_string());
            }
        }
        let tail: String = {
            let chars: Vec<char> = message.chars().collect();
            let start = chars.len().saturating_sub(160);
            chars[start..].iter().collect()
        };
        Err(Error::Transport(format!(
            "no scripted response (table {tag_table}, fingerprint {canonical}); \
             message tail: ...{tail}"
        )))
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let trimmed = text.trim();
        if let Some(v) = self.embeddings.get(trimmed) {
            return Ok(EmbeddingVector {
                values: v.clone(),
                model_tag: "scripted-pinned".to_string(),
            });
        }
        let digest = Sha256::digest(trimmed.as_bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha20Rng::from_seed(seed);
        let mut values: Vec<f64> = (0..DERIVED_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm: f64 = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        } else {
            values[0] = 1.0;
        }
        Ok(EmbeddingVector {
            values,
            model_tag: format!("scripted-hash-{DERIVED_DIM}"),
        })
    }

    fn name(&self) -> &'static str {
        "scripted"
    }
}
