//! Experience-reuse baselines to compare the knowledge store against.
//!
//! All three share one mechanism: past experiences are stored as free
//! text, retrieved by embedding similarity to the incoming question, and
//! injected into the agent's initial context. They differ in what gets
//! stored per experience:
//!
//! * **trace** — the full interaction trajectory plus the gold query;
//! * **pairs** — just the question and its gold query;
//! * **naive** — an LLM-written free-text lesson, with no structured
//!   applicability condition (retrieval keys on the lesson text itself).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::discovery::ExperienceTuple;
use crate::error::{Error, Result};
use crate::exec::{equivalent, exec_sql, DatabaseHandle, Outcome};
use crate::gateway::schema::parse_naive;
use crate::gateway::{ChatMessage, ChatRequest, Gateway, SchemaTag};
use crate::prompts;

/// What a memory entry holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemoryKind {
    Trace,
    Pairs,
    Naive,
}

impl MemoryKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MemoryKind::Trace => "trace",
            MemoryKind::Pairs => "pairs",
            MemoryKind::Naive => "naive",
        }
    }
}

/// One stored experience.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub question_id: String,
    pub question: String,
    /// The injectable text (trajectory, pair, or lesson).
    pub text: String,
}

/// A flat store of past-experience texts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryStore {
    pub kind: MemoryKind,
    pub entries: Vec<MemoryEntry>,
}

impl MemoryStore {
    pub fn new(kind: MemoryKind) -> Self {
        MemoryStore {
            kind,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Validation(format!("memory store serialization: {e}")))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn open(path: &Path) -> Result<MemoryStore> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
    }

    /// The text retrieval ranks against for an entry: the source question
    /// for trace/pairs memory, the lesson itself for naive knowledge.
    fn retrieval_key<'a>(&self, entry: &'a MemoryEntry) -> &'a str {
        match self.kind {
            MemoryKind::Trace | MemoryKind::Pairs => &entry.question,
            MemoryKind::Naive => &entry.text,
        }
    }
}

/// Render one tuple as a trajectory text for trace memory.
fn trace_text(tuple: &ExperienceTuple) -> String {
    let mut out = format!("Past question: {}\n", tuple.question);
    match &tuple.trace {
        Some(trace) => {
            for turn in &trace.turns {
                let marker = if turn.is_final { "answer" } else { "explore" };
                out.push_str(&format!(
                    "[{marker}] ```sql\n{}\n```\n",
                    turn.emitted_sql
                ));
            }
        }
        None => {
            out.push_str(&format!(
                "[answer] ```sql\n{}\n```\n",
                tuple.agent_sql
            ));
        }
    }
    out.push_str(&format!(
        "Correct query: ```sql\n{}\n```",
        tuple.gold_sql
    ));
    out
}

/// Render one tuple as a question/gold pair for pairs memory.
fn pair_text(tuple: &ExperienceTuple) -> String {
    format!(
        "Past question: {}\nCorrect query: ```sql\n{}\n```",
        tuple.question, tuple.gold_sql
    )
}

/// Build trace or pairs memory from experience tuples (no LLM involved).
pub fn build_memory(kind: MemoryKind, tuples: &[ExperienceTuple]) -> MemoryStore {
    let render = match kind {
        MemoryKind::Trace => trace_text,
        MemoryKind::Pairs => pair_text,
        MemoryKind::Naive => {
            panic!("naive knowledge needs an LLM; use build_naive_knowledge")
        }
    };
    MemoryStore {
        kind,
        entries: tuples
            .iter()
            .map(|t| MemoryEntry {
                question_id: t.question_id.clone(),
                question: t.question.clone(),
                text: render(t),
            })
            .collect(),
    }
}

/// Build naive knowledge: one free-text lesson per *mistaken* tuple
/// (tuples whose agent query already matches the gold result teach
/// nothing and are skipped). Gold queries that fail to execute are
/// skipped too.
pub fn build_naive_knowledge(
    tuples: &[ExperienceTuple],
    db: &DatabaseHandle,
    gateway: &Gateway,
) -> Result<MemoryStore> {
    let mut store = MemoryStore::new(MemoryKind::Naive);
    for tuple in tuples {
        let gold_result = exec_sql(&tuple.gold_sql, db);
        if matches!(gold_result.outcome, Outcome::Failure(_)) {
            log::warn!("skipping {}: gold query fails", tuple.question_id);
            continue;
        }
        let agent_result = exec_sql(&tuple.agent_sql, db);
        if equivalent(&agent_result, &gold_result).equivalent {
            continue;
        }
        let request = ChatRequest::new(vec![
            ChatMessage::system(prompts::NAIVE_KNOWLEDGE_SYSTEM),
            ChatMessage::user(prompts::naive_knowledge_user(
                &tuple.question,
                &tuple.agent_sql,
                &tuple.gold_sql,
            )),
        ])
        .with_schema(SchemaTag::NaiveKnowledge);
        let resp = gateway.chat(request)?;
        let statement = parse_naive(&resp.text)?.statement.trim().to_string();
        if statement.is_empty() {
            return Err(Error::MalformedOutput(format!(
                "empty lesson for tuple {}",
                tuple.question_id
            )));
        }
        store.entries.push(MemoryEntry {
            question_id: tuple.question_id.clone(),
            question: tuple.question.clone(),
            text: statement,
        });
    }
    Ok(store)
}

/// Top-k entries by embedding similarity to the question, descending, with
/// ties broken by insertion order (earlier wins). Deterministic for a
/// deterministic embedding backend.
pub fn memory_retrieve<'a>(
    store: &'a MemoryStore,
    question: &str,
    k: usize,
    gateway: &Gateway,
) -> Result<Vec<&'a MemoryEntry>> {
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(store.entries.len());
    for (i, entry) in store.entries.iter().enumerate() {
        let sim = gateway.emb_sim(question, store.retrieval_key(entry))?;
        scored.push((sim, i));
    }
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
    });
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(_, i)| &store.entries[i])
        .collect())
}

/// Render retrieved entries as an initial-context preamble.
pub fn memory_preamble(entries: &[&MemoryEntry]) -> String {
    let texts: Vec<String> = entries.iter().map(|e| e.text.clone()).collect();
    prompts::knowledge_preamble(&texts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::scripted::ScriptedBackend;
    use crate::gateway::GatewayLimits;
    use std::sync::Arc;

    fn tuple(id: &str, q: &str, gold: &str, agent: &str) -> ExperienceTuple {
        ExperienceTuple {
            question_id: id.into(),
            question: q.into(),
            gold_sql: gold.into(),
            agent_sql: agent.into(),
            trace: None,
        }
    }

    fn gw(backend: ScriptedBackend) -> Gateway {
        Gateway::new(Arc::new(backend), GatewayLimits::default())
    }

    #[test]
    fn pairs_and_trace_memory_render_the_experience() {
        let tuples = vec![tuple("1", "How many shoes?", "SELECT 1", "SELECT 2")];
        let pairs = build_memory(MemoryKind::Pairs, &tuples);
        assert_eq!(pairs.len(), 1);
        assert!(pairs.entries[0].text.contains("How many shoes?"));
        assert!(pairs.entries[0].text.contains("SELECT 1"));
        assert!(!pairs.entries[0].text.contains("SELECT 2"));

        let trace = build_memory(MemoryKind::Trace, &tuples);
        assert!(trace.entries[0].text.contains("SELECT 2"), "trajectory shown");
        assert!(trace.entries[0].text.contains("SELECT 1"), "gold appended");
    }

    #[test]
    fn naive_knowledge_skips_already_correct_tuples() {
        let db = DatabaseHandle::in_memory().unwrap();
        db.execute_batch("CREATE TABLE t (x INTEGER); INSERT INTO t VALUES (1), (2);")
            .unwrap();
        let backend = ScriptedBackend::new().with_response(
            Some(SchemaTag::NaiveKnowledge),
            "*",
            r#"{"statement": "Count rows with COUNT(*), not SUM(x)."}"#,
        );
        let g = gw(backend);
        let tuples = vec![
            tuple("1", "How many rows?", "SELECT COUNT(*) FROM t", "SELECT SUM(x) FROM t"),
            tuple("2", "Max x?", "SELECT MAX(x) FROM t", "SELECT MAX(x) FROM t"),
        ];
        let store = build_naive_knowledge(&tuples, &db, &g).unwrap();
        assert_eq!(store.len(), 1, "correct tuple is skipped");
        assert_eq!(store.entries[0].question_id, "1");
        assert!(store.entries[0].text.contains("COUNT(*)"));
        assert_eq!(g.call_count(), 1);
    }

    #[test]
    fn retrieval_ranks_by_similarity_with_stable_ties() {
        let backend = ScriptedBackend::new()
            .with_embedding("query", vec![1.0, 0.0, 0.0])
            .with_embedding("near", vec![0.9, 0.1, 0.0])
            .with_embedding("far", vec![0.0, 1.0, 0.0])
            .with_embedding("mid-a", vec![0.5, 0.5, 0.0])
            .with_embedding("mid-b", vec![0.5, 0.5, 0.0]);
        let g = gw(backend);
        let mut store = MemoryStore::new(MemoryKind::Pairs);
        for q in ["far", "mid-a", "near", "mid-b"] {
            store.entries.push(MemoryEntry {
                question_id: q.into(),
                question: q.into(),
                text: format!("text for {q}"),
            });
        }
        let hits = memory_retrieve(&store, "query", 3, &g).unwrap();
        let ids: Vec<&str> = hits.iter().map(|e| e.question_id.as_str()).collect();
        // near (0.995) first, then the tied mids in insertion order.
        assert_eq!(ids, vec!["near", "mid-a", "mid-b"]);

        let all = memory_retrieve(&store, "query", 10, &g).unwrap();
        assert_eq!(all.len(), 4, "k beyond the store size returns everything");
    }

    #[test]
    fn naive_memory_ranks_on_the_lesson_text() {
        let backend = ScriptedBackend::new()
            .with_embedding("brand question", vec![1.0, 0.0])
            .with_embedding("lesson about brands", vec![0.9, 0.1])
            .with_embedding("lesson about dates", vec![0.0, 1.0]);
        let g = gw(backend);
        let mut store = MemoryStore::new(MemoryKind::Naive);
        for (id, text) in [("d", "lesson about dates"), ("b", "lesson about brands")] {
            store.entries.push(MemoryEntry {
                question_id: id.into(),
                question: "unrelated".into(),
                text: text.into(),
            });
        }
        let hits = memory_retrieve(&store, "brand question", 1, &g).unwrap();
        assert_eq!(hits[0].question_id, "b");
    }

    #[test]
    fn save_open_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("memory.json");
        let store = build_memory(
            MemoryKind::Pairs,
            &[tuple("1", "q", "SELECT 1", "SELECT 2")],
        );
        store.save(&path).unwrap();
        let back = MemoryStore::open(&path).unwrap();
        assert_eq!(back, store);
    }

    #[test]
    fn preamble_lists_entry_texts() {
        let entries = [
            MemoryEntry {
                question_id: "1".into(),
                question: "q1".into(),
                text: "first lesson".into(),
            },
            MemoryEntry {
                question_id: "2".into(),
                question: "q2".into(),
                text: "second lesson".into(),
            },
        ];
        let refs: Vec<&MemoryEntry> = entries.iter().collect();
        let preamble = memory_preamble(&refs);
        assert!(preamble.contains("first lesson"));
        assert!(preamble.contains("second lesson"));
    }
}
