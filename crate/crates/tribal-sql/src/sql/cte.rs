//! CTE segmentation: split a query into its WITH-clause segments plus the
//! final body, and reassemble segments back into one executable query.
//!
//! Segments are ordered as declared; the final segment carries `name: None`.
//! Nested WITH clauses inside a CTE body are hoisted into the top-level
//! chain (immediately before their host segment, preserving inner order) so
//! downstream consumers see a flat list — except when hoisting would collide
//! with an existing segment name, in which case the nested clause stays
//! embedded. SQLite treats the `RECURSIVE` marker as optional noise, so it
//! is not preserved. Reassembly of a single-segment query returns the body
//! unchanged.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sqlparser::ast as sp;
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::Parser;

use crate::error::{Error, Result};

/// One segment of a segmented query: a named CTE or the final body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CteSegment {
    /// Position in the chain, 0-based; the final segment is last.
    pub index: usize,
    /// CTE name (lowercased), or `None` for the final body.
    pub name: Option<String>,
    /// The segment's own SELECT text (without `WITH name AS (...)`).
    pub sql_text: String,
    /// Names of earlier segments this one references.
    pub referenced_ctes: BTreeSet<String>,
}

/// Split `sql` into CTE segments plus the final body.
///
/// A query without a WITH clause yields exactly one segment. Fails on
/// unparsable text or when the text is not a query.
pub fn split_ctes(sql: &str) -> Result<Vec<CteSegment>> {
    if sql.trim().is_empty() {
        return Err(Error::EmptyInput("sql"));
    }
    let statements = Parser::parse_sql(&SQLiteDialect {}, sql)
        .map_err(|e| Error::Parse(e.to_string()))?;
    let query = statements
        .iter()
        .find_map(|s| match s {
            sp::Statement::Query(q) => Some(q.as_ref().clone()),
            _ => None,
        })
        .ok_or_else(|| Error::Parse("no query statement found".into()))?;

    let mut ctes: Vec<(String, sp::Query)> = Vec::new();
    if let Some(with) = &query.with {
        for cte in &with.cte_tables {
            hoist(cte, &mut ctes);
        }
    }

    let mut names: BTreeSet<String> = BTreeSet::new();
    let mut segments = Vec::with_capacity(ctes.len() + 1);
    for (i, (name, body)) in ctes.iter().enumerate() {
        segments.push(CteSegment {
            index: i,
            name: Some(name.clone()),
            sql_text: body.to_string(),
            referenced_ctes: referenced(body, &names),
        });
        names.insert(name.clone());
    }

    let mut final_query = query.clone();
    final_query.with = None;
    segments.push(CteSegment {
        index: ctes.len(),
        name: None,
        sql_text: final_query.to_string(),
        referenced_ctes: referenced(&final_query, &names),
    });
    Ok(segments)
}

/// Hoist a CTE (and any WITH clause nested in its body) into `out`.
///
/// Nested clauses are emitted before the host so references stay forward.
/// On a name collision the nested clause is left embedded in the host body.
fn hoist(cte: &sp::Cte, out: &mut Vec<(String, sp::Query)>) {
    let name = cte.alias.name.value.to_ascii_lowercase();
    let mut body = cte.query.as_ref().clone();
    if let Some(inner) = body.with.take() {
        let collision = inner.cte_tables.iter().any(|c| {
            let n = c.alias.name.value.to_ascii_lowercase();
            n == name || out.iter().any(|(seen, _)| *seen == n)
        });
        if collision {
            body.with = Some(inner);
        } else {
            for c in &inner.cte_tables {
                hoist(c, out);
            }
        }
    }
    out.push((name, body));
}

/// Relation names referenced by `query` that appear in `names`.
fn referenced(query: &sp::Query, names: &BTreeSet<String>) -> BTreeSet<String> {
    let mut found = BTreeSet::new();
    collect_relations_query(query, &mut found);
    found.intersection(names).cloned().collect()
}

fn collect_relations_query(q: &sp::Query, out: &mut BTreeSet<String>) {
    if let Some(with) = &q.with {
        for cte in &with.cte_tables {
            collect_relations_query(&cte.query, out);
        }
    }
    collect_relations_set_expr(&q.body, out);
}

fn collect_relations_set_expr(body: &sp::SetExpr, out: &mut BTreeSet<String>) {
    match body {
        sp::SetExpr::Select(select) => {
            for twj in &select.from {
                collect_relations_factor(&twj.relation, out);
                for j in &twj.joins {
                    collect_relations_factor(&j.relation, out);
                }
            }
            for e in [&select.selection, &select.having].into_iter().flatten() {
                collect_relations_expr(e, out);
            }
            for item in &select.projection {
                match item {
                    sp::SelectItem::UnnamedExpr(e)
                    | sp::SelectItem::ExprWithAlias { expr: e, .. } => {
                        collect_relations_expr(e, out)
                    }
                    _ => {}
                }
            }
        }
        sp::SetExpr::Query(q) => collect_relations_query(q, out),
        sp::SetExpr::SetOperation { left, right, .. } => {
            collect_relations_set_expr(left, out);
            collect_relations_set_expr(right, out);
        }
        _ => {}
    }
}

fn collect_relations_factor(factor: &sp::TableFactor, out: &mut BTreeSet<String>) {
    match factor {
        sp::TableFactor::Table { name, .. } => {
            if let Some(last) = name.0.last() {
                out.insert(last.value.to_ascii_lowercase());
            }
        }
        sp::TableFactor::Derived { subquery, .. } => collect_relations_query(subquery, out),
        sp::TableFactor::NestedJoin {
            table_with_joins, ..
        } => {
            collect_relations_factor(&table_with_joins.relation, out);
            for j in &table_with_joins.joins {
                collect_relations_factor(&j.relation, out);
            }
        }
        _ => {}
    }
}

/// Shallow expression scan for subqueries that might reference CTEs.
fn collect_relations_expr(expr: &sp::Expr, out: &mut BTreeSet<String>) {
    use sp::Expr as E;
    match expr {
        E::Subquery(q) => collect_relations_query(q, out),
        E::Exists { subquery, .. } => collect_relations_query(subquery, out),
        E::InSubquery { expr, subquery, .. } => {
            collect_relations_expr(expr, out);
            collect_relations_query(subquery, out);
        }
        E::BinaryOp { left, right, .. } => {
            collect_relations_expr(left, out);
            collect_relations_expr(right, out);
        }
        E::UnaryOp { expr, .. } | E::Nested(expr) => collect_relations_expr(expr, out),
        E::InList { expr, list, .. } => {
            collect_relations_expr(expr, out);
            for e in list {
                collect_relations_expr(e, out);
            }
        }
        E::Between {
            expr, low, high, ..
        } => {
            collect_relations_expr(expr, out);
            collect_relations_expr(low, out);
            collect_relations_expr(high, out);
        }
        E::Case {
            operand,
            conditions,
            results,
            else_result,
        } => {
            for e in operand.iter().map(|b| b.as_ref()) {
                collect_relations_expr(e, out);
            }
            for e in conditions.iter().chain(results.iter()) {
                collect_relations_expr(e, out);
            }
            if let Some(e) = else_result {
                collect_relations_expr(e, out);
            }
        }
        _ => {}
    }
}

/// Reassemble segments produced by [`split_ctes`] into one query.
///
/// The last segment must be the final body (`name: None`); earlier segments
/// must all be named. A single-segment input is returned verbatim.
pub fn reassemble(segments: &[CteSegment]) -> Result<String> {
    let (last, heads) = segments
        .split_last()
        .ok_or(Error::EmptyInput("segments"))?;
    if last.name.is_some() {
        return Err(Error::Validation(
            "last segment must be the final body (name = None)".into(),
        ));
    }
    if heads.is_empty() {
        return Ok(last.sql_text.clone());
    }
    let mut out = String::from("WITH ");
    for (i, seg) in heads.iter().enumerate() {
        let name = seg.name.as_deref().ok_or_else(|| {
            Error::Validation(format!("segment {} lacks a CTE name", seg.index))
        })?;
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(name);
        out.push_str(" AS (");
        out.push_str(seg.sql_text.trim().trim_end_matches(';'));
        out.push(')');
    }
    out.push(' ');
    out.push_str(&last.sql_text);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_query_is_one_segment() {
        let segs = split_ctes("SELECT 1").unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].name, None);
        assert!(segs[0].referenced_ctes.is_empty());
        assert_eq!(reassemble(&segs).unwrap(), segs[0].sql_text);
    }

    #[test]
    fn chain_preserves_order_and_references() {
        let segs = split_ctes(
            "WITH a AS (SELECT 1 AS x), b AS (SELECT x FROM a) SELECT * FROM b JOIN a",
        )
        .unwrap();
        assert_eq!(segs.len(), 3);
        assert_eq!(segs[0].name.as_deref(), Some("a"));
        assert_eq!(segs[1].name.as_deref(), Some("b"));
        assert_eq!(segs[2].name, None);
        assert!(segs[0].referenced_ctes.is_empty());
        assert_eq!(
            segs[1].referenced_ctes.iter().collect::<Vec<_>>(),
            vec!["a"]
        );
        assert_eq!(segs[2].referenced_ctes.len(), 2);
    }

    #[test]
    fn nested_with_is_hoisted() {
        let segs = split_ctes(
            "WITH outer_q AS (WITH inner_q AS (SELECT 2 AS y) SELECT y FROM inner_q) \
             SELECT * FROM outer_q",
        )
        .unwrap();
        let names: Vec<_> = segs.iter().filter_map(|s| s.name.as_deref()).collect();
        assert_eq!(names, vec!["inner_q", "outer_q"]);
        assert!(!segs[1].sql_text.to_ascii_lowercase().contains("with"));
    }

    #[test]
    fn nested_with_name_collision_stays_embedded() {
        let segs = split_ctes(
            "WITH a AS (SELECT 1 AS x), b AS (WITH a AS (SELECT 2 AS x) SELECT x FROM a) \
             SELECT * FROM b",
        )
        .unwrap();
        let names: Vec<_> = segs.iter().filter_map(|s| s.name.as_deref()).collect();
        assert_eq!(names, vec!["a", "b"]);
        assert!(segs[1].sql_text.to_ascii_lowercase().contains("with"));
    }

    #[test]
    fn reassembly_round_trips_text() {
        let sql = "WITH q1 AS (SELECT 1 AS v), q2 AS (SELECT v + 1 AS w FROM q1) \
                   SELECT w FROM q2 WHERE w > 0";
        let segs = split_ctes(sql).unwrap();
        let back = reassemble(&segs).unwrap();
        // The rebuilt text must itself split into the same segments.
        let again = split_ctes(&back).unwrap();
        assert_eq!(segs, again);
    }

    #[test]
    fn empty_and_invalid_inputs_fail() {
        assert!(split_ctes(" ").is_err());
        assert!(split_ctes("WITH a AS (SELECT").is_err());
        assert!(reassemble(&[]).is_err());
    }
}
