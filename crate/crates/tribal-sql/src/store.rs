//! The knowledge store: rows of tribal knowledge indexed by structured
//! applicability conditions.
//!
//! A [`KnowledgeRow`] pairs a natural-language statement with an
//! [`ApplicabilityCondition`] over the four feature dimensions of
//! [`QueryFeatures`]. A row matches a query when **every** dimension either
//! is a wildcard or shares at least one value with the query's features.
//! Retrieval = structural match + one LLM filter call that prunes
//! candidates that match structurally but not semantically.
//!
//! Persistence is line-delimited JSON, append-on-insert, so a crash never
//! loses accepted rows. A derived inverted index accelerates candidate
//! lookup; the linear scan remains the reference semantics and the two are
//! checked against each other by property tests.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{schema, ChatMessage, ChatRequest, Gateway, SchemaTag};
use crate::prompts;
use crate::sql::catalog::SchemaCatalog;
use crate::sql::features::{
    extract_features_lossy, is_vocabulary_keyword, QueryFeatures,
};
use crate::sql::TypeTag;

/// One feature dimension of a condition: wildcard or a non-empty value set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "FeatureRepr", into = "FeatureRepr")]
pub enum FeatureSet {
    Wildcard,
    Values(BTreeSet<String>),
}

/// Wire representation: `"*"` or an array of strings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum FeatureRepr {
    Star(String),
    Values(Vec<String>),
}

impl TryFrom<FeatureRepr> for FeatureSet {
    type Error = String;
    fn try_from(repr: FeatureRepr) -> std::result::Result<Self, String> {
        match repr {
            FeatureRepr::Star(s) if s == "*" => Ok(FeatureSet::Wildcard),
            FeatureRepr::Star(s) => Err(format!("expected \"*\" or an array, got {s:?}")),
            FeatureRepr::Values(v) => {
                let set: BTreeSet<String> = v
                    .into_iter()
                    .map(|s| s.trim().to_ascii_lowercase())
                    .filter(|s| !s.is_empty())
                    .collect();
                if set.is_empty() {
                    Err("feature value set is empty".into())
                } else {
                    Ok(FeatureSet::Values(set))
                }
            }
        }
    }
}

impl From<FeatureSet> for FeatureRepr {
    fn from(fs: FeatureSet) -> FeatureRepr {
        match fs {
            FeatureSet::Wildcard => FeatureRepr::Star("*".to_string()),
            FeatureSet::Values(v) => FeatureRepr::Values(v.into_iter().collect()),
        }
    }
}

impl FeatureSet {
    /// Build a value set, normalizing case; fails on an empty set.
    pub fn values<I: IntoIterator<Item = S>, S: AsRef<str>>(items: I) -> Result<FeatureSet> {
        let set: BTreeSet<String> = items
            .into_iter()
            .map(|s| s.as_ref().trim().to_ascii_lowercase())
            .filter(|s| !s.is_empty())
            .collect();
        if set.is_empty() {
            return Err(Error::Validation("feature value set is empty".into()));
        }
        Ok(FeatureSet::Values(set))
    }

    /// Wildcard (matches everything).
    pub fn wildcard() -> FeatureSet {
        FeatureSet::Wildcard
    }

    /// The match rule for one dimension: wildcard, or overlap with the
    /// query's feature values.
    pub fn matches(&self, present: &BTreeSet<String>) -> bool {
        match self {
            FeatureSet::Wildcard => true,
            FeatureSet::Values(vals) => vals.iter().any(|v| present.contains(v)),
        }
    }

    fn values_ref(&self) -> Option<&BTreeSet<String>> {
        match self {
            FeatureSet::Wildcard => None,
            FeatureSet::Values(v) => Some(v),
        }
    }
}

/// When a knowledge row applies: one [`FeatureSet`] per dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplicabilityCondition {
    pub sql_keywords: FeatureSet,
    pub tables: FeatureSet,
    pub columns: FeatureSet,
    pub data_types: FeatureSet,
}

impl ApplicabilityCondition {
    /// Condition that matches every query.
    pub fn any() -> Self {
        ApplicabilityCondition {
            sql_keywords: FeatureSet::Wildcard,
            tables: FeatureSet::Wildcard,
            columns: FeatureSet::Wildcard,
            data_types: FeatureSet::Wildcard,
        }
    }

    /// The match predicate: every dimension wildcard-or-overlapping.
    pub fn matches(&self, features: &QueryFeatures) -> bool {
        self.sql_keywords.matches(&features.sql_keywords)
            && self.tables.matches(&features.tables)
            && self.columns.matches(&features.columns)
            && self.data_types.matches(&features.data_types)
    }

    /// Compact one-line rendering for listings, e.g.
    /// `kw={where} tables={purchase} cols={brand,name} types=*`.
    pub fn summary(&self) -> String {
        fn part(f: &FeatureSet) -> String {
            match f {
                FeatureSet::Wildcard => "*".to_string(),
                FeatureSet::Values(vs) => {
                    format!("{{{}}}", vs.iter().cloned().collect::<Vec<_>>().join(","))
                }
            }
        }
        format!(
            "kw={} tables={} cols={} types={}",
            part(&self.sql_keywords),
            part(&self.tables),
            part(&self.columns),
            part(&self.data_types)
        )
    }

    /// Vocabulary checks: keywords from the closed keyword list, data types
    /// from the type taxonomy. Table/column names are not checked here —
    /// rows may outlive schema details — but see
    /// [`discovery`](crate::discovery) for generation-time checks.
    pub fn validate(&self) -> Result<()> {
        if let Some(kws) = self.sql_keywords.values_ref() {
            for k in kws {
                if !is_vocabulary_keyword(k) {
                    return Err(Error::Validation(format!(
                        "sql_keywords value {k:?} is not in the keyword vocabulary"
                    )));
                }
            }
        }
        if let Some(tys) = self.data_types.values_ref() {
            for t in tys {
                if TypeTag::parse(t).is_none() {
                    return Err(Error::Validation(format!(
                        "data_types value {t:?} is not a known type tag"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Where a row came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_question_id: String,
    /// The correction statement (delta) the row was distilled from.
    pub correction_statement: String,
    /// RFC 3339 creation time.
    pub created_at: String,
    /// True when the source edit could not be verified as single-clause.
    #[serde(default)]
    pub non_atomic: bool,
}

/// One row of tribal knowledge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeRow {
    pub id: u64,
    pub knowledge: String,
    pub condition: ApplicabilityCondition,
    pub provenance: Provenance,
}

/// A retrieval hit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievedKnowledge {
    pub row_id: u64,
    pub knowledge: String,
}

/// Inputs to [`TkStore::retrieve`].
#[derive(Debug, Clone, Default)]
pub struct RetrievalQuery<'a> {
    /// The SQL (whole query or one CTE body) to match against.
    pub sql: &'a str,
    /// The user question, shown to the filter when available.
    pub question: Option<&'a str>,
    /// Relation names (e.g. sibling CTEs) that must not count as tables.
    pub exclude_relations: BTreeSet<String>,
}

// Per-dimension posting lists: rows with a wildcard, and rows by value.
#[derive(Debug, Default, Clone)]
struct DimIndex {
    wildcard_rows: Vec<usize>,
    by_value: BTreeMap<String, Vec<usize>>,
}

impl DimIndex {
    fn add(&mut self, row: usize, fs: &FeatureSet) {
        match fs {
            FeatureSet::Wildcard => self.wildcard_rows.push(row),
            FeatureSet::Values(vals) => {
                for v in vals {
                    self.by_value.entry(v.clone()).or_default().push(row);
                }
            }
        }
    }

    /// Sorted row indices admitted by this dimension for `present` values.
    fn admitted(&self, present: &BTreeSet<String>) -> Vec<usize> {
        let mut rows: BTreeSet<usize> = self.wildcard_rows.iter().copied().collect();
        for v in present {
            if let Some(list) = self.by_value.get(v) {
                rows.extend(list.iter().copied());
            }
        }
        rows.into_iter().collect()
    }
}

#[derive(Debug, Default, Clone)]
struct InvertedIndex {
    sql_keywords: DimIndex,
    tables: DimIndex,
    columns: DimIndex,
    data_types: DimIndex,
}

impl InvertedIndex {
    fn add(&mut self, row: usize, cond: &ApplicabilityCondition) {
        self.sql_keywords.add(row, &cond.sql_keywords);
        self.tables.add(row, &cond.tables);
        self.columns.add(row, &cond.columns);
        self.data_types.add(row, &cond.data_types);
    }

    fn candidates(&self, features: &QueryFeatures) -> Vec<usize> {
        let lists = [
            self.sql_keywords.admitted(&features.sql_keywords),
            self.tables.admitted(&features.tables),
            self.columns.admitted(&features.columns),
            self.data_types.admitted(&features.data_types),
        ];
        let mut acc: Option<BTreeSet<usize>> = None;
        for list in lists {
            let set: BTreeSet<usize> = list.into_iter().collect();
            acc = Some(match acc {
                None => set,
                Some(prev) => prev.intersection(&set).copied().collect(),
            });
        }
        acc.unwrap_or_default().into_iter().collect()
    }
}

/// The store: rows in insertion order, optional file binding, derived index.
pub struct TkStore {
    rows: Vec<KnowledgeRow>,
    index: InvertedIndex,
    next_id: u64,
    path: Option<PathBuf>,
}

impl TkStore {
    /// Unbound store (tests, ablations).
    pub fn in_memory() -> Self {
        TkStore {
            rows: Vec::new(),
            index: InvertedIndex::default(),
            next_id: 1,
            path: None,
        }
    }

    /// Open a store bound to `path`, loading existing rows. A missing file
    /// starts an empty store; it is created on first insert.
    pub fn open(path: &Path) -> Result<Self> {
        let mut store = TkStore::in_memory();
        store.path = Some(path.to_path_buf());
        if !path.exists() {
            return Ok(store);
        }
        let file = std::fs::File::open(path)?;
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: KnowledgeRow = serde_json::from_str(&line).map_err(|e| {
                Error::Validation(format!(
                    "{}:{}: bad knowledge row: {e}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            if store.rows.iter().any(|r| r.id == row.id) {
                return Err(Error::Validation(format!(
                    "{}:{}: duplicate row id {}",
                    path.display(),
                    lineno + 1,
                    row.id
                )));
            }
            store.next_id = store.next_id.max(row.id + 1);
            store.index.add(store.rows.len(), &row.condition);
            store.rows.push(row);
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[KnowledgeRow] {
        &self.rows
    }

    pub fn get(&self, id: u64) -> Option<&KnowledgeRow> {
        self.rows.iter().find(|r| r.id == id)
    }

    /// Insert a validated row; assigns the id, persists before returning.
    pub fn insert(
        &mut self,
        knowledge: &str,
        condition: ApplicabilityCondition,
        provenance: Provenance,
    ) -> Result<u64> {
        if knowledge.trim().is_empty() {
            return Err(Error::EmptyInput("knowledge statement"));
        }
        condition.validate()?;
        let row = KnowledgeRow {
            id: self.next_id,
            knowledge: knowledge.trim().to_string(),
            condition,
            provenance,
        };
        if let Some(path) = &self.path {
            let mut file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)?;
            let mut line = serde_json::to_string(&row)
                .map_err(|e| Error::Validation(format!("row serialization: {e}")))?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
        }
        self.next_id += 1;
        self.index.add(self.rows.len(), &row.condition);
        let id = row.id;
        self.rows.push(row);
        Ok(id)
    }

    /// Rewrite the whole store to `path` (also rebinds the store to it).
    pub fn save(&mut self, path: &Path) -> Result<()> {
        let mut body = String::new();
        for row in &self.rows {
            body.push_str(
                &serde_json::to_string(row)
                    .map_err(|e| Error::Validation(format!("row serialization: {e}")))?,
            );
            body.push('\n');
        }
        std::fs::write(path, body)?;
        self.path = Some(path.to_path_buf());
        Ok(())
    }

    /// Reference candidate lookup: linear scan, insertion order.
    pub fn candidates(&self, features: &QueryFeatures) -> Vec<&KnowledgeRow> {
        self.rows
            .iter()
            .filter(|r| r.condition.matches(features))
            .collect()
    }

    /// Index-accelerated candidate lookup; must agree with
    /// [`TkStore::candidates`] (property-tested).
    pub fn candidates_indexed(&self, features: &QueryFeatures) -> Vec<&KnowledgeRow> {
        self.index
            .candidates(features)
            .into_iter()
            .map(|i| &self.rows[i])
            .filter(|r| r.condition.matches(features))
            .collect()
    }

    /// Retrieve knowledge for a query: structural condition match, then one
    /// LLM filter call pruning candidates that match structurally but not
    /// semantically. An empty candidate set returns without any LLM call; a
    /// filter that stays malformed after retries degrades to returning all
    /// candidates.
    pub fn retrieve(
        &self,
        query: &RetrievalQuery<'_>,
        catalog: &SchemaCatalog,
        gateway: &Gateway,
    ) -> Result<Vec<RetrievedKnowledge>> {
        let features = extract_features_lossy(query.sql, catalog, &query.exclude_relations);
        let candidates = self.candidates(&features);
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let statements: Vec<String> =
            candidates.iter().map(|r| r.knowledge.clone()).collect();
        let request = ChatRequest::new(vec![
            ChatMessage::system(prompts::FILTER_KNOWLEDGE_SYSTEM),
            ChatMessage::user(prompts::filter_knowledge_user(
                query.sql,
                query.question,
                &statements,
            )),
        ])
        .with_schema(SchemaTag::FilterKnowledge);

        let kept: Vec<usize> = match gateway.chat(request) {
            Ok(resp) => {
                let payload = schema::parse_kept(&resp.text)?;
                let mut kept: Vec<usize> = payload
                    .kept
                    .into_iter()
                    .filter(|&i| i < candidates.len())
                    .collect();
                kept.sort_unstable();
                kept.dedup();
                kept
            }
            // A filter that never produced valid indices keeps everything;
            // transport and budget problems propagate.
            Err(Error::MalformedOutput(_)) => (0..candidates.len()).collect(),
            Err(e) => return Err(e),
        };
        Ok(kept
            .into_iter()
            .map(|i| RetrievedKnowledge {
                row_id: candidates[i].id,
                knowledge: candidates[i].knowledge.clone(),
            })
            .collect())
    }

    /// Drop exact duplicates (same knowledge text and condition), keeping
    /// the earliest row. Rewrites the file when bound. Returns how many
    /// rows were removed.
    pub fn compact(&mut self) -> Result<usize> {
        let mut seen: BTreeSet<String> = BTreeSet::new();
        let before = self.rows.len();
        let mut kept: Vec<KnowledgeRow> = Vec::with_capacity(before);
        for row in self.rows.drain(..) {
            let key = format!(
                "{}\u{1f}{}",
                row.knowledge,
                serde_json::to_string(&row.condition).unwrap_or_default()
            );
            if seen.insert(key) {
                kept.push(row);
            }
        }
        self.rows = kept;
        self.index = InvertedIndex::default();
        for (i, row) in self.rows.iter().enumerate() {
            self.index.add(i, &row.condition);
        }
        let removed = before - self.rows.len();
        if removed > 0 {
            if let Some(path) = self.path.clone() {
                self.save(&path)?;
            }
        }
        Ok(removed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::scripted::ScriptedBackend;
    use crate::gateway::GatewayLimits;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn prov(qid: &str) -> Provenance {
        Provenance {
            source_question_id: qid.to_string(),
            correction_statement: "test".to_string(),
            created_at: "2024-01-01T00:00:00Z".to_string(),
            non_atomic: false,
        }
    }

    fn features(kw: &[&str], tables: &[&str], cols: &[&str], types: &[&str]) -> QueryFeatures {
        QueryFeatures {
            sql_keywords: set(kw),
            tables: set(tables),
            columns: set(cols),
            data_types: set(types),
        }
    }

    #[test]
    fn match_rule_per_dimension() {
        let cond = ApplicabilityCondition {
            sql_keywords: FeatureSet::values(["where"]).unwrap(),
            tables: FeatureSet::values(["purchase"]).unwrap(),
            columns: FeatureSet::values(["brand", "name"]).unwrap(),
            data_types: FeatureSet::Wildcard,
        };
        // All dimensions overlap (or wildcard).
        assert!(cond.matches(&features(
            &["select", "where"],
            &["purchase"],
            &["brand", "price"],
            &["text"]
        )));
        // Missing keyword overlap.
        assert!(!cond.matches(&features(
            &["select"],
            &["purchase"],
            &["brand"],
            &["text"]
        )));
        // Missing column overlap.
        assert!(!cond.matches(&features(
            &["where"],
            &["purchase"],
            &["price"],
            &["text"]
        )));
        // Wildcard dimension never blocks, even against empty features.
        assert!(ApplicabilityCondition::any().matches(&features(&[], &[], &[], &[])));
    }

    #[test]
    fn empty_feature_sets_are_rejected() {
        assert!(FeatureSet::values(Vec::<&str>::new()).is_err());
        assert!(FeatureSet::values(["  "]).is_err());
        let parsed: std::result::Result<FeatureSet, _> = serde_json::from_str("[]");
        assert!(parsed.is_err());
    }

    #[test]
    fn serde_wire_format() {
        let star: FeatureSet = serde_json::from_str("\"*\"").unwrap();
        assert_eq!(star, FeatureSet::Wildcard);
        assert_eq!(serde_json::to_string(&star).unwrap(), "\"*\"");
        let vals: FeatureSet = serde_json::from_str("[\"WHERE\", \"where\"]").unwrap();
        assert_eq!(vals, FeatureSet::values(["where"]).unwrap());
        assert_eq!(serde_json::to_string(&vals).unwrap(), "[\"where\"]");
        assert!(serde_json::from_str::<FeatureSet>("\"anything\"").is_err());
    }

    #[test]
    fn vocabulary_validation() {
        let mut cond = ApplicabilityCondition::any();
        cond.sql_keywords = FeatureSet::values(["where"]).unwrap();
        assert!(cond.validate().is_ok());
        cond.sql_keywords = FeatureSet::values(["frobnicate"]).unwrap();
        assert!(cond.validate().is_err());
        cond.sql_keywords = FeatureSet::Wildcard;
        cond.data_types = FeatureSet::values(["decimal"]).unwrap();
        assert!(cond.validate().is_err());
        cond.data_types = FeatureSet::values(["date"]).unwrap();
        assert!(cond.validate().is_ok());
    }

    #[test]
    fn insert_persists_and_open_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let mut store = TkStore::open(&path).unwrap();
        let cond = ApplicabilityCondition {
            sql_keywords: FeatureSet::values(["where"]).unwrap(),
            tables: FeatureSet::values(["purchase"]).unwrap(),
            columns: FeatureSet::values(["brand", "name"]).unwrap(),
            data_types: FeatureSet::Wildcard,
        };
        let id1 = store.insert("use name not brand", cond.clone(), prov("q1")).unwrap();
        let id2 = store
            .insert("dates live in pur_date", ApplicabilityCondition::any(), prov("q2"))
            .unwrap();
        assert_eq!((id1, id2), (1, 2));

        let bytes_before = std::fs::read(&path).unwrap();
        let reopened = TkStore::open(&path).unwrap();
        assert_eq!(reopened.rows(), store.rows());
        // Round-trip keeps the file byte-identical (ordering preserved).
        let mut reopened = reopened;
        reopened.save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes_before);

        // Insert validation.
        assert!(store.insert("  ", ApplicabilityCondition::any(), prov("q3")).is_err());
    }

    #[test]
    fn compact_merges_exact_duplicates_only() {
        let mut store = TkStore::in_memory();
        let cond = ApplicabilityCondition {
            sql_keywords: FeatureSet::values(["where"]).unwrap(),
            tables: FeatureSet::Wildcard,
            columns: FeatureSet::Wildcard,
            data_types: FeatureSet::Wildcard,
        };
        store.insert("lesson", cond.clone(), prov("q1")).unwrap();
        store.insert("lesson", cond.clone(), prov("q2")).unwrap();
        store.insert("different lesson", cond, prov("q3")).unwrap();
        assert_eq!(store.compact().unwrap(), 1);
        assert_eq!(store.len(), 2);
        assert_eq!(store.rows()[0].provenance.source_question_id, "q1");
        // Matching still works after the index rebuild.
        let f = features(&["where"], &[], &[], &[]);
        assert_eq!(store.candidates(&f).len(), 2);
        assert_eq!(store.candidates_indexed(&f).len(), 2);
    }

    #[test]
    fn retrieve_empty_store_makes_no_llm_call() {
        let store = TkStore::in_memory();
        let gateway = Gateway::new(Arc::new(ScriptedBackend::new()), GatewayLimits::default());
        let mut cat = SchemaCatalog::new();
        cat.add_column("purchase", "brand", "TEXT");
        let out = store
            .retrieve(
                &RetrievalQuery {
                    sql: "SELECT * FROM purchase WHERE brand = 'Nike'",
                    question: None,
                    exclude_relations: BTreeSet::new(),
                },
                &cat,
                &gateway,
            )
            .unwrap();
        assert!(out.is_empty());
        assert_eq!(gateway.call_count(), 0);
    }

    #[test]
    fn retrieve_filters_candidates_through_the_llm() {
        let mut store = TkStore::in_memory();
        let cond = ApplicabilityCondition {
            sql_keywords: FeatureSet::values(["where"]).unwrap(),
            tables: FeatureSet::values(["purchase"]).unwrap(),
            columns: FeatureSet::values(["brand", "name"]).unwrap(),
            data_types: FeatureSet::Wildcard,
        };
        store.insert("brand is unreliable; match name", cond, prov("q110")).unwrap();
        store
            .insert("dates are text in pur_date", ApplicabilityCondition {
                sql_keywords: FeatureSet::Wildcard,
                tables: FeatureSet::Wildcard,
                columns: FeatureSet::Wildcard,
                data_types: FeatureSet::values(["date"]).unwrap(),
            }, prov("q111"))
            .unwrap();

        let mut cat = SchemaCatalog::new();
        cat.add_column("purchase", "brand", "TEXT");
        cat.add_column("purchase", "price", "REAL");
        cat.add_column("purchase", "pur_date", "DATE");

        let backend = ScriptedBackend::new().with_response(
            Some(SchemaTag::FilterKnowledge),
            "Which statements apply?",
            r#"{"kept": [0]}"#,
        );
        let gateway = Gateway::new(Arc::new(backend), GatewayLimits::default());
        let out = store
            .retrieve(
                &RetrievalQuery {
                    sql: "SELECT SUM(price) FROM purchase \
                          WHERE brand = 'Polo' AND pur_date >= '2024-01-01'",
                    question: Some("total Polo revenue this year?"),
                    exclude_relations: BTreeSet::new(),
                },
                &cat,
                &gateway,
            )
            .unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].knowledge.contains("brand is unreliable"));
        assert_eq!(gateway.call_count(), 1);
    }

    #[test]
    fn retrieve_survives_malformed_filter_by_keeping_all() {
        let mut store = TkStore::in_memory();
        store
            .insert("keep me", ApplicabilityCondition::any(), prov("q1"))
            .unwrap();
        let backend = ScriptedBackend::new()
            .with_response(Some(SchemaTag::FilterKnowledge), "*", "never valid json");
        let gateway = Gateway::new(Arc::new(backend), GatewayLimits::default());
        let cat = SchemaCatalog::new();
        let out = store
            .retrieve(
                &RetrievalQuery {
                    sql: "SELECT 1",
                    question: None,
                    exclude_relations: BTreeSet::new(),
                },
                &cat,
                &gateway,
            )
            .unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn retrieve_uses_lossy_features_for_unparsable_sql() {
        let mut store = TkStore::in_memory();
        let cond = ApplicabilityCondition {
            sql_keywords: FeatureSet::values(["where"]).unwrap(),
            tables: FeatureSet::values(["purchase"]).unwrap(),
            columns: FeatureSet::Wildcard,
            data_types: FeatureSet::Wildcard,
        };
        store.insert("applies to purchase filters", cond, prov("q1")).unwrap();
        let backend = ScriptedBackend::new()
            .with_response(Some(SchemaTag::FilterKnowledge), "*", r#"{"kept": [0]}"#);
        let gateway = Gateway::new(Arc::new(backend), GatewayLimits::default());
        let mut cat = SchemaCatalog::new();
        cat.add_column("purchase", "brand", "TEXT");
        let out = store
            .retrieve(
                &RetrievalQuery {
                    // Broken draft: parser fails, token scan still sees
                    // FROM purchase and WHERE.
                    sql: "SELEC x FROM purchase WHERE brand =",
                    question: None,
                    exclude_relations: BTreeSet::new(),
                },
                &cat,
                &gateway,
            )
            .unwrap();
        assert_eq!(out.len(), 1);
    }

    // Property: the inverted index agrees with the linear scan.
    fn arb_feature_set() -> impl Strategy<Value = FeatureSet> {
        let vocab = ["where", "join", "group-by", "limit", "aggregate"];
        prop_oneof![
            Just(FeatureSet::Wildcard),
            proptest::collection::btree_set(
                proptest::sample::select(vocab.to_vec()).prop_map(|s| s.to_string()),
                1..3
            )
            .prop_map(FeatureSet::Values),
        ]
    }

    fn arb_name_set(pool: &'static [&'static str]) -> impl Strategy<Value = FeatureSet> {
        prop_oneof![
            Just(FeatureSet::Wildcard),
            proptest::collection::btree_set(
                proptest::sample::select(pool.to_vec()).prop_map(|s| s.to_string()),
                1..3
            )
            .prop_map(FeatureSet::Values),
        ]
    }

    proptest! {
        #[test]
        fn index_agrees_with_linear_scan(
            conds in proptest::collection::vec(
                (arb_feature_set(),
                 arb_name_set(&["purchase", "store", "inventory"]),
                 arb_name_set(&["brand", "name", "price", "city"]),
                 arb_name_set(&["text", "date", "int", "float"])),
                0..24),
            kw in proptest::collection::btree_set(
                proptest::sample::select(vec!["where", "join", "group-by", "limit", "aggregate"])
                    .prop_map(|s| s.to_string()), 0..4),
            tbl in proptest::collection::btree_set(
                proptest::sample::select(vec!["purchase", "store", "inventory"])
                    .prop_map(|s| s.to_string()), 0..3),
            col in proptest::collection::btree_set(
                proptest::sample::select(vec!["brand", "name", "price", "city"])
                    .prop_map(|s| s.to_string()), 0..3),
            ty in proptest::collection::btree_set(
                proptest::sample::select(vec!["text", "date", "int", "float"])
                    .prop_map(|s| s.to_string()), 0..3),
        ) {
            let mut store = TkStore::in_memory();
            for (i, (k, t, c, d)) in conds.into_iter().enumerate() {
                store.insert(
                    &format!("row {i}"),
                    ApplicabilityCondition { sql_keywords: k, tables: t, columns: c, data_types: d },
                    prov(&format!("q{i}")),
                ).unwrap();
            }
            let features = QueryFeatures {
                sql_keywords: kw, tables: tbl, columns: col, data_types: ty,
            };
            let linear: Vec<u64> = store.candidates(&features).iter().map(|r| r.id).collect();
            let indexed: Vec<u64> = store.candidates_indexed(&features).iter().map(|r| r.id).collect();
            prop_assert_eq!(linear, indexed);
        }
    }
}
