//! Clause-level diff between two SQL queries.
//!
//! Each query is segmented (see [`crate::sql::cte`]), segments are paired by
//! CTE name (final bodies pair with each other), and every segment is
//! decomposed into canonically rendered clauses. A clause whose rendering
//! differs between the sides yields one [`ClauseTag`]; CTEs present on only
//! one side, or reordered, yield a single structural `with` tag. Because
//! both sides are canonicalized through the parser, whitespace- and
//! keyword-case-only edits produce an empty diff. Identifier case is
//! preserved by the parser (quoted identifiers can be case-significant), so
//! changing the case of an identifier counts as a change.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sqlparser::ast as sp;
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::Parser;

use crate::error::{Error, Result};
use crate::sql::cte::{split_ctes, CteSegment};

/// One changed clause: which segment (CTE name, `None` for the final body
/// or for the structural `with` tag) and which clause within it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClauseTag {
    pub segment: Option<String>,
    pub clause: String,
}

impl ClauseTag {
    fn new(segment: Option<&str>, clause: &str) -> Self {
        ClauseTag {
            segment: segment.map(|s| s.to_string()),
            clause: clause.to_string(),
        }
    }
}

impl fmt::Display for ClauseTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.segment {
            Some(seg) => write!(f, "{seg}:{}", self.clause),
            None => f.write_str(&self.clause),
        }
    }
}

/// Result of [`clause_diff`]: the set of changed clause tags, sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClauseDiff {
    pub changed_clauses: Vec<ClauseTag>,
}

impl ClauseDiff {
    /// True when exactly one clause changed.
    pub fn is_atomic(&self) -> bool {
        self.changed_clauses.len() == 1
    }

    /// True when nothing changed (the edit was cosmetic).
    pub fn is_empty(&self) -> bool {
        self.changed_clauses.is_empty()
    }

    /// Human-readable `a, b:c` listing for prompts and logs.
    pub fn describe(&self) -> String {
        self.changed_clauses
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Compute the clause-level diff between two queries.
///
/// Symmetric: `clause_diff(a, b) == clause_diff(b, a)`. Fails when either
/// side does not parse as a query.
pub fn clause_diff(a: &str, b: &str) -> Result<ClauseDiff> {
    let segs_a = split_ctes(a)?;
    let segs_b = split_ctes(b)?;
    let mut tags: BTreeSet<ClauseTag> = BTreeSet::new();

    let names_a: Vec<&str> = segs_a.iter().filter_map(|s| s.name.as_deref()).collect();
    let names_b: Vec<&str> = segs_b.iter().filter_map(|s| s.name.as_deref()).collect();
    let set_a: BTreeSet<&str> = names_a.iter().copied().collect();
    let set_b: BTreeSet<&str> = names_b.iter().copied().collect();

    // CTEs added, removed, or reordered change the WITH structure itself.
    let common: BTreeSet<&str> = set_a.intersection(&set_b).copied().collect();
    let order_a: Vec<&str> = names_a.iter().copied().filter(|n| common.contains(n)).collect();
    let order_b: Vec<&str> = names_b.iter().copied().filter(|n| common.contains(n)).collect();
    if set_a != set_b || order_a != order_b {
        tags.insert(ClauseTag::new(None, "with"));
    }

    for name in &common {
        let sa = segs_a.iter().find(|s| s.name.as_deref() == Some(name));
        let sb = segs_b.iter().find(|s| s.name.as_deref() == Some(name));
        if let (Some(sa), Some(sb)) = (sa, sb) {
            diff_segment(sa, sb, Some(name), &mut tags)?;
        }
    }
    let fa = segs_a.last().expect("split_ctes yields >= 1 segment");
    let fb = segs_b.last().expect("split_ctes yields >= 1 segment");
    diff_segment(fa, fb, None, &mut tags)?;

    Ok(ClauseDiff {
        changed_clauses: tags.into_iter().collect(),
    })
}

fn diff_segment(
    a: &CteSegment,
    b: &CteSegment,
    segment: Option<&str>,
    tags: &mut BTreeSet<ClauseTag>,
) -> Result<()> {
    let ca = decompose(&a.sql_text)?;
    let cb = decompose(&b.sql_text)?;
    let keys: BTreeSet<&String> = ca.keys().chain(cb.keys()).collect();
    for key in keys {
        if ca.get(key) != cb.get(key) {
            tags.insert(ClauseTag::new(segment, key));
        }
    }
    Ok(())
}

/// Decompose one segment's text into clause name → canonical rendering.
fn decompose(sql: &str) -> Result<BTreeMap<String, String>> {
    let statements = Parser::parse_sql(&SQLiteDialect {}, sql)
        .map_err(|e| Error::Parse(e.to_string()))?;
    let query = statements
        .iter()
        .find_map(|s| match s {
            sp::Statement::Query(q) => Some(q.as_ref()),
            _ => None,
        })
        .ok_or_else(|| Error::Parse("no query statement found".into()))?;

    let mut clauses: BTreeMap<String, String> = BTreeMap::new();
    let mut put = |name: &str, value: String| {
        clauses.insert(name.to_string(), value);
    };

    // A segment normally has no WITH of its own; an embedded one (nested
    // CTE left in place on a name collision) is compared wholesale.
    if let Some(with) = &query.with {
        put("with", with.to_string());
    }

    match query.body.as_ref() {
        sp::SetExpr::Select(select) => {
            let mut select_list = String::new();
            if let Some(d) = &select.distinct {
                select_list.push_str(&d.to_string());
                select_list.push(' ');
            }
            if let Some(t) = &select.top {
                select_list.push_str(&t.to_string());
                select_list.push(' ');
            }
            select_list.push_str(
                &select
                    .projection
                    .iter()
                    .map(|p| p.to_string())
                    .collect::<Vec<_>>()
                    .join(", "),
            );
            put("select-list", select_list);

            if !select.from.is_empty() {
                let relations = select
                    .from
                    .iter()
                    .map(|twj| twj.relation.to_string())
                    .collect::<Vec<_>>()
                    .join(", ");
                put("from", relations);
                let joins = select
                    .from
                    .iter()
                    .flat_map(|twj| twj.joins.iter().map(|j| j.to_string()))
                    .collect::<Vec<_>>()
                    .join(" ");
                if !joins.is_empty() {
                    put("join", joins);
                }
            }
            if let Some(e) = &select.selection {
                put("where", e.to_string());
            }
            match &select.group_by {
                sp::GroupByExpr::All(_) => put("group-by", select.group_by.to_string()),
                sp::GroupByExpr::Expressions(exprs, _) => {
                    if !exprs.is_empty() {
                        put("group-by", select.group_by.to_string());
                    }
                }
            }
            if let Some(e) = &select.having {
                put("having", e.to_string());
            }
            let mut window = String::new();
            for w in &select.named_window {
                window.push_str(&w.to_string());
                window.push(' ');
            }
            if let Some(q) = &select.qualify {
                window.push_str(&q.to_string());
            }
            if !window.trim().is_empty() {
                put("window", window.trim().to_string());
            }
        }
        // Set operations (and other non-SELECT bodies) are compared as one
        // rendered unit: edits inside them count as a single clause.
        other => put("set-op", other.to_string()),
    }

    if let Some(order_by) = &query.order_by {
        if !order_by.exprs.is_empty() {
            put("order-by", order_by.to_string());
        }
    }
    let mut limit = String::new();
    if let Some(l) = &query.limit {
        limit.push_str(&l.to_string());
    }
    if let Some(o) = &query.offset {
        limit.push_str(" OFFSET ");
        limit.push_str(&o.value.to_string());
    }
    if let Some(f) = &query.fetch {
        limit.push_str(" FETCH ");
        limit.push_str(&f.to_string());
    }
    if !limit.is_empty() {
        put("limit", limit);
    }
    Ok(clauses)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(diff: &ClauseDiff) -> Vec<String> {
        diff.changed_clauses.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn identical_and_cosmetic_edits_are_empty() {
        let d = clause_diff(
            "SELECT name FROM purchase WHERE price > 3",
            "select  name\nFROM purchase  where price > 3",
        )
        .unwrap();
        assert!(d.is_empty(), "got {:?}", d);
    }

    #[test]
    fn single_where_change_is_atomic() {
        let d = clause_diff(
            "SELECT SUM(price) FROM purchase WHERE brand = 'Nike'",
            "SELECT SUM(price) FROM purchase WHERE name LIKE 'Nike%'",
        )
        .unwrap();
        assert_eq!(tags(&d), vec!["where"]);
        assert!(d.is_atomic());
    }

    #[test]
    fn two_clause_change_is_not_atomic() {
        let d = clause_diff(
            "SELECT name FROM purchase WHERE price > 3",
            "SELECT brand FROM purchase WHERE price > 5",
        )
        .unwrap();
        assert_eq!(tags(&d), vec!["select-list", "where"]);
        assert!(!d.is_atomic());
    }

    #[test]
    fn clause_addition_and_removal_count() {
        let d = clause_diff(
            "SELECT name FROM purchase",
            "SELECT name FROM purchase ORDER BY name LIMIT 5",
        )
        .unwrap();
        assert_eq!(tags(&d), vec!["limit", "order-by"]);
    }

    #[test]
    fn cte_body_changes_carry_the_segment_name() {
        let d = clause_diff(
            "WITH q1 AS (SELECT name, price FROM purchase WHERE price > 1) SELECT * FROM q1",
            "WITH q1 AS (SELECT name, price FROM purchase WHERE price > 9) SELECT * FROM q1",
        )
        .unwrap();
        assert_eq!(tags(&d), vec!["q1:where"]);
        assert!(d.is_atomic());
    }

    #[test]
    fn cte_rename_is_structural() {
        let d = clause_diff(
            "WITH quarterone AS (SELECT name FROM purchase) SELECT * FROM quarterone",
            "WITH q1 AS (SELECT name FROM purchase) SELECT * FROM q1",
        )
        .unwrap();
        assert!(tags(&d).contains(&"with".to_string()), "got {:?}", d);
        assert!(!d.is_atomic());
    }

    #[test]
    fn join_and_from_are_distinct_clauses() {
        let d = clause_diff(
            "SELECT s.city FROM store s JOIN inventory i ON s.store_id = i.store_id",
            "SELECT s.city FROM store s LEFT JOIN inventory i ON s.store_id = i.store_id",
        )
        .unwrap();
        assert_eq!(tags(&d), vec!["join"]);
    }

    #[test]
    fn diff_is_symmetric() {
        let a = "SELECT name FROM purchase WHERE price > 3 GROUP BY name";
        let b = "SELECT name FROM purchase WHERE price > 4 ORDER BY name";
        assert_eq!(clause_diff(a, b).unwrap(), clause_diff(b, a).unwrap());
    }

    #[test]
    fn set_operations_compare_wholesale() {
        let d = clause_diff(
            "SELECT name FROM purchase UNION SELECT name FROM inventory",
            "SELECT name FROM purchase UNION SELECT city FROM store",
        )
        .unwrap();
        assert_eq!(tags(&d), vec!["set-op"]);
    }

    #[test]
    fn unparsable_input_fails() {
        assert!(clause_diff("SELECT", "SELECT 1").is_err());
    }
}
