//! Query feature extraction: the four dimensions a knowledge row's
//! applicability condition is matched against.
//!
//! For a SQL string the extractor produces a [`QueryFeatures`] value holding
//!
//! * `sql_keywords` — structural constructs drawn from a closed vocabulary
//!   ([`KEYWORD_VOCABULARY`]),
//! * `tables` — referenced relations (CTE names and caller-excluded
//!   relations are never reported as tables),
//! * `columns` — bare column names referenced anywhere in the query,
//! * `data_types` — normalized type tags of the columns that resolve
//!   against the schema catalog.
//!
//! Extraction is *recall-biased*: when a column cannot be resolved to a
//! single table (missing qualifier, CTE output, select alias) its name is
//! still recorded, and an ambiguous name contributes the types of every
//! candidate table. Wildcard projections (`SELECT *`) contribute no column
//! names. [`extract_features_lossy`] degrades to a token-scan approximation
//! when the text does not parse, so that retrieval still works for draft
//! queries an agent has not yet made syntactically valid.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sqlparser::ast as sp;
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::Parser;

use crate::error::{Error, Result};
use crate::sql::catalog::SchemaCatalog;

/// Closed vocabulary for the `sql_keywords` feature dimension.
pub const KEYWORD_VOCABULARY: &[&str] = &[
    "select",
    "from",
    "where",
    "join",
    "inner-join",
    "left-join",
    "right-join",
    "full-join",
    "cross-join",
    "group-by",
    "having",
    "order-by",
    "limit",
    "distinct",
    "union",
    "intersect",
    "except",
    "with",
    "case",
    "cast",
    "like",
    "in",
    "between",
    "exists",
    "over",
    "window",
    "partition-by",
    "aggregate",
    "count",
    "sum",
    "avg",
    "min",
    "max",
];

/// True when `word` belongs to [`KEYWORD_VOCABULARY`].
pub fn is_vocabulary_keyword(word: &str) -> bool {
    KEYWORD_VOCABULARY.contains(&word)
}

/// The four feature dimensions extracted from a query.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryFeatures {
    pub sql_keywords: BTreeSet<String>,
    pub tables: BTreeSet<String>,
    pub columns: BTreeSet<String>,
    pub data_types: BTreeSet<String>,
}

impl QueryFeatures {
    /// Access a dimension by its canonical name.
    pub fn dimension(&self, name: &str) -> Option<&BTreeSet<String>> {
        match name {
            "sql_keywords" => Some(&self.sql_keywords),
            "tables" => Some(&self.tables),
            "columns" => Some(&self.columns),
            "data_types" => Some(&self.data_types),
            _ => None,
        }
    }
}

/// Extract features from `sql`, failing on unparsable text.
pub fn extract_features(sql: &str, catalog: &SchemaCatalog) -> Result<QueryFeatures> {
    extract_features_scoped(sql, catalog, &BTreeSet::new())
}

/// Like [`extract_features`] but with an extra set of relation names (for
/// example CTEs of an enclosing query) that must never be reported in the
/// `tables` dimension.
pub fn extract_features_scoped(
    sql: &str,
    catalog: &SchemaCatalog,
    exclude_relations: &BTreeSet<String>,
) -> Result<QueryFeatures> {
    if sql.trim().is_empty() {
        return Err(Error::EmptyInput("sql"));
    }
    let statements = Parser::parse_sql(&SQLiteDialect {}, sql)
        .map_err(|e| Error::Parse(e.to_string()))?;
    let mut walker = Walker::new(catalog, exclude_relations);
    let mut saw_query = false;
    for stmt in &statements {
        if let sp::Statement::Query(q) = stmt {
            saw_query = true;
            walker.walk_query(q, &[]);
        }
    }
    if !saw_query {
        return Err(Error::Parse("no query statement found".into()));
    }
    Ok(walker.finish())
}

/// Extract features, degrading to a token-scan approximation when the text
/// does not parse. Never fails on non-empty input.
pub fn extract_features_lossy(
    sql: &str,
    catalog: &SchemaCatalog,
    exclude_relations: &BTreeSet<String>,
) -> QueryFeatures {
    match extract_features_scoped(sql, catalog, exclude_relations) {
        Ok(f) => f,
        Err(_) => token_scan(sql, catalog, exclude_relations),
    }
}

// ---------------------------------------------------------------------------
// AST walk
// ---------------------------------------------------------------------------

/// What an alias (or bare relation name) in a FROM scope refers to.
#[derive(Debug, Clone)]
enum RelKind {
    /// A real catalog table (stored lowercased).
    Table(String),
    /// A CTE, derived table, or otherwise opaque relation: columns
    /// qualified by it are recorded by name only.
    Opaque,
}

#[derive(Debug, Default)]
struct Scope {
    aliases: BTreeMap<String, RelKind>,
}

impl Scope {
    fn tables(&self) -> impl Iterator<Item = &str> {
        self.aliases.values().filter_map(|k| match k {
            RelKind::Table(t) => Some(t.as_str()),
            RelKind::Opaque => None,
        })
    }
}

struct Walker<'a> {
    catalog: &'a SchemaCatalog,
    excluded: BTreeSet<String>,
    out: QueryFeatures,
}

impl<'a> Walker<'a> {
    fn new(catalog: &'a SchemaCatalog, exclude: &BTreeSet<String>) -> Self {
        Walker {
            catalog,
            excluded: exclude.iter().map(|s| s.to_ascii_lowercase()).collect(),
            out: QueryFeatures::default(),
        }
    }

    fn finish(self) -> QueryFeatures {
        self.out
    }

    fn keyword(&mut self, k: &'static str) {
        debug_assert!(is_vocabulary_keyword(k), "keyword {k} not in vocabulary");
        self.out.sql_keywords.insert(k.to_string());
    }

    fn record_table(&mut self, name: &str) {
        let n = name.to_ascii_lowercase();
        if !self.excluded.contains(&n) {
            self.out.tables.insert(n);
        }
    }

    fn record_column_of(&mut self, table: &str, column: &str) {
        let c = column.to_ascii_lowercase();
        if let Some(tag) = self.catalog.column_type(table, &c) {
            self.out.data_types.insert(tag.as_str().to_string());
        }
        self.out.columns.insert(c);
    }

    /// Record a column reference, resolving its type through the scope
    /// stack (innermost scope last).
    fn record_column(&mut self, qualifier: Option<&str>, column: &str, scopes: &[Scope]) {
        let c = column.to_ascii_lowercase();
        if let Some(q) = qualifier {
            let q = q.to_ascii_lowercase();
            for scope in scopes.iter().rev() {
                match scope.aliases.get(&q) {
                    Some(RelKind::Table(t)) => {
                        let t = t.clone();
                        self.record_column_of(&t, &c);
                        return;
                    }
                    Some(RelKind::Opaque) => {
                        self.out.columns.insert(c);
                        return;
                    }
                    None => {}
                }
            }
            // Unresolvable qualifier: keep the column name anyway.
            self.out.columns.insert(c);
            return;
        }
        // Unqualified: first scope (innermost outward) holding a table with
        // this column wins; ambiguity within that scope unions the types.
        for scope in scopes.iter().rev() {
            let hits: Vec<String> = scope
                .tables()
                .filter(|t| self.catalog.has_column(t, &c))
                .map(|t| t.to_string())
                .collect();
            if !hits.is_empty() {
                for t in hits {
                    self.record_column_of(&t, &c);
                }
                return;
            }
        }
        self.out.columns.insert(c);
    }

    fn walk_query(&mut self, query: &sp::Query, outer: &[Scope]) {
        let mut cte_scope = Scope::default();
        if let Some(with) = &query.with {
            self.keyword("with");
            for cte in &with.cte_tables {
                let name = cte.alias.name.value.to_ascii_lowercase();
                // CTE bodies see the catalog plus earlier sibling CTEs.
                let mut scopes: Vec<Scope> = Vec::new();
                scopes.push(Scope {
                    aliases: cte_scope.aliases.clone(),
                });
                self.walk_query(&cte.query, &scopes);
                cte_scope.aliases.insert(name, RelKind::Opaque);
            }
        }
        let mut scopes: Vec<Scope> = outer.to_vec_cloned();
        scopes.push(cte_scope);
        // ORDER BY / LIMIT resolve names in the body's FROM scope.
        let body_scope = self.walk_set_expr(&query.body, &scopes);
        scopes.push(body_scope);
        if let Some(order_by) = &query.order_by {
            if !order_by.exprs.is_empty() {
                self.keyword("order-by");
            }
            for obe in &order_by.exprs {
                self.walk_expr(&obe.expr, &scopes);
            }
        }
        if let Some(limit) = &query.limit {
            self.keyword("limit");
            self.walk_expr(limit, &scopes);
        }
        if let Some(offset) = &query.offset {
            self.keyword("limit");
            self.walk_expr(&offset.value, &scopes);
        }
        if let Some(fetch) = &query.fetch {
            self.keyword("limit");
            if let Some(q) = &fetch.quantity {
                self.walk_expr(q, &scopes);
            }
        }
    }

    /// Walk a set expression, returning the FROM scope of its SELECT(s) so
    /// the caller can resolve ORDER BY / LIMIT expressions against it.
    fn walk_set_expr(&mut self, body: &sp::SetExpr, scopes: &[Scope]) -> Scope {
        match body {
            sp::SetExpr::Select(select) => self.walk_select(select, scopes),
            sp::SetExpr::Query(q) => {
                self.walk_query(q, scopes);
                Scope::default()
            }
            sp::SetExpr::SetOperation { op, left, right, .. } => {
                match op {
                    sp::SetOperator::Union => self.keyword("union"),
                    sp::SetOperator::Intersect => self.keyword("intersect"),
                    sp::SetOperator::Except => self.keyword("except"),
                }
                let mut merged = self.walk_set_expr(left, scopes);
                let right_scope = self.walk_set_expr(right, scopes);
                merged.aliases.extend(right_scope.aliases);
                merged
            }
            // VALUES lists and dialect-specific bodies carry no schema
            // references we track.
            _ => Scope::default(),
        }
    }

    fn walk_select(&mut self, select: &sp::Select, outer: &[Scope]) -> Scope {
        self.keyword("select");
        if !select.from.is_empty() {
            self.keyword("from");
        }

        // Build this SELECT's scope from the FROM clause first so that
        // projections and predicates resolve against it.
        let mut scope = Scope::default();
        let mut join_exprs: Vec<&sp::Expr> = Vec::new();
        let mut using_cols: Vec<String> = Vec::new();
        for twj in &select.from {
            self.enter_factor(&twj.relation, &mut scope, outer);
            for join in &twj.joins {
                self.keyword("join");
                let constraint = match &join.join_operator {
                    sp::JoinOperator::Inner(c) => {
                        self.keyword("inner-join");
                        Some(c)
                    }
                    sp::JoinOperator::LeftOuter(c) => {
                        self.keyword("left-join");
                        Some(c)
                    }
                    sp::JoinOperator::RightOuter(c) => {
                        self.keyword("right-join");
                        Some(c)
                    }
                    sp::JoinOperator::FullOuter(c) => {
                        self.keyword("full-join");
                        Some(c)
                    }
                    sp::JoinOperator::CrossJoin => {
                        self.keyword("cross-join");
                        None
                    }
                    sp::JoinOperator::LeftSemi(c)
                    | sp::JoinOperator::RightSemi(c)
                    | sp::JoinOperator::LeftAnti(c)
                    | sp::JoinOperator::RightAnti(c) => Some(c),
                    _ => None,
                };
                self.enter_factor(&join.relation, &mut scope, outer);
                if let Some(c) = constraint {
                    match c {
                        sp::JoinConstraint::On(e) => join_exprs.push(e),
                        sp::JoinConstraint::Using(cols) => {
                            using_cols.extend(cols.iter().map(|i| i.value.clone()))
                        }
                        _ => {}
                    }
                }
            }
        }

        let mut scopes: Vec<Scope> = outer.to_vec_cloned();
        scopes.push(scope);

        for e in join_exprs {
            self.walk_expr(e, &scopes);
        }
        for c in using_cols {
            self.record_column(None, &c, &scopes);
        }

        match &select.distinct {
            Some(sp::Distinct::Distinct) => self.keyword("distinct"),
            Some(sp::Distinct::On(exprs)) => {
                self.keyword("distinct");
                for e in exprs {
                    self.walk_expr(e, &scopes);
                }
            }
            None => {}
        }
        if select.top.is_some() {
            self.keyword("limit");
        }

        for item in &select.projection {
            match item {
                sp::SelectItem::UnnamedExpr(e) => self.walk_expr(e, &scopes),
                sp::SelectItem::ExprWithAlias { expr, .. } => self.walk_expr(expr, &scopes),
                // A wildcard projection names no specific column.
                sp::SelectItem::Wildcard(_) | sp::SelectItem::QualifiedWildcard(_, _) => {}
            }
        }
        if let Some(e) = &select.selection {
            self.keyword("where");
            self.walk_expr(e, &scopes);
        }
        match &select.group_by {
            sp::GroupByExpr::All(_) => self.keyword("group-by"),
            sp::GroupByExpr::Expressions(exprs, _) => {
                if !exprs.is_empty() {
                    self.keyword("group-by");
                }
                for e in exprs {
                    self.walk_expr(e, &scopes);
                }
            }
        }
        if let Some(e) = &select.having {
            self.keyword("having");
            self.walk_expr(e, &scopes);
        }
        if let Some(e) = &select.qualify {
            self.keyword("window");
            self.walk_expr(e, &scopes);
        }
        for w in &select.named_window {
            self.keyword("window");
            if let sp::NamedWindowExpr::WindowSpec(spec) = &w.1 {
                self.walk_window_spec(spec, &scopes);
            }
        }
        scopes.pop().unwrap_or_default()
    }

    fn enter_factor(&mut self, factor: &sp::TableFactor, scope: &mut Scope, outer: &[Scope]) {
        match factor {
            sp::TableFactor::Table { name, alias, .. } => {
                let base = name
                    .0
                    .last()
                    .map(|i| i.value.to_ascii_lowercase())
                    .unwrap_or_default();
                if base.is_empty() {
                    return;
                }
                let known_opaque = self.excluded.contains(&base)
                    || outer.iter().any(|s| {
                        matches!(s.aliases.get(&base), Some(RelKind::Opaque))
                    });
                let kind = if known_opaque {
                    RelKind::Opaque
                } else {
                    self.record_table(&base);
                    RelKind::Table(base.clone())
                };
                let key = alias
                    .as_ref()
                    .map(|a| a.name.value.to_ascii_lowercase())
                    .unwrap_or_else(|| base.clone());
                scope.aliases.insert(key, kind);
                if alias.is_some() {
                    // The bare name stays resolvable alongside its alias.
                    scope.aliases.entry(base.clone()).or_insert_with(|| {
                        if known_opaque {
                            RelKind::Opaque
                        } else {
                            RelKind::Table(base.clone())
                        }
                    });
                }
            }
            sp::TableFactor::Derived { subquery, alias, .. } => {
                self.walk_query(subquery, outer);
                if let Some(a) = alias {
                    scope
                        .aliases
                        .insert(a.name.value.to_ascii_lowercase(), RelKind::Opaque);
                }
            }
            sp::TableFactor::NestedJoin {
                table_with_joins, ..
            } => {
                self.enter_factor(&table_with_joins.relation, scope, outer);
                for j in &table_with_joins.joins {
                    self.keyword("join");
                    self.enter_factor(&j.relation, scope, outer);
                }
            }
            // Table functions, UNNEST and other exotic factors do not
            // reference catalog relations we track.
            _ => {}
        }
    }

    fn walk_window_spec(&mut self, spec: &sp::WindowSpec, scopes: &[Scope]) {
        if !spec.partition_by.is_empty() {
            self.keyword("partition-by");
        }
        for e in &spec.partition_by {
            self.walk_expr(e, scopes);
        }
        for obe in &spec.order_by {
            self.walk_expr(&obe.expr, scopes);
        }
    }

    fn walk_function(&mut self, f: &sp::Function, scopes: &[Scope]) {
        let fname = f
            .name
            .0
            .last()
            .map(|i| i.value.to_ascii_lowercase())
            .unwrap_or_default();
        match fname.as_str() {
            "count" => {
                self.keyword("aggregate");
                self.keyword("count");
            }
            "sum" => {
                self.keyword("aggregate");
                self.keyword("sum");
            }
            "avg" => {
                self.keyword("aggregate");
                self.keyword("avg");
            }
            "min" => {
                self.keyword("aggregate");
                self.keyword("min");
            }
            "max" => {
                self.keyword("aggregate");
                self.keyword("max");
            }
            "total" | "group_concat" | "string_agg" => self.keyword("aggregate"),
            _ => {}
        }
        if let sp::FunctionArguments::List(list) = &f.args {
            if list.duplicate_treatment == Some(sp::DuplicateTreatment::Distinct) {
                self.keyword("distinct");
            }
            for arg in &list.args {
                let fae = match arg {
                    sp::FunctionArg::Named { arg, .. } => arg,
                    sp::FunctionArg::Unnamed(a) => a,
                };
                if let sp::FunctionArgExpr::Expr(e) = fae {
                    self.walk_expr(e, scopes);
                }
            }
        }
        if let Some(over) = &f.over {
            self.keyword("over");
            self.keyword("window");
            if let sp::WindowType::WindowSpec(spec) = over {
                self.walk_window_spec(spec, scopes);
            }
        }
        if let Some(filter) = &f.filter {
            self.walk_expr(filter, scopes);
        }
        for obe in &f.within_group {
            self.walk_expr(&obe.expr, scopes);
        }
    }

    fn walk_expr(&mut self, expr: &sp::Expr, scopes: &[Scope]) {
        use sp::Expr as E;
        match expr {
            E::Identifier(id) => self.record_column(None, &id.value, scopes),
            E::CompoundIdentifier(parts) => {
                if parts.len() >= 2 {
                    let q = parts[parts.len() - 2].value.clone();
                    let c = parts[parts.len() - 1].value.clone();
                    self.record_column(Some(&q), &c, scopes);
                } else if let Some(p) = parts.last() {
                    self.record_column(None, &p.value, scopes);
                }
            }
            E::BinaryOp { left, right, .. } => {
                self.walk_expr(left, scopes);
                self.walk_expr(right, scopes);
            }
            E::UnaryOp { expr, .. } | E::Nested(expr) => self.walk_expr(expr, scopes),
            E::IsNull(e)
            | E::IsNotNull(e)
            | E::IsTrue(e)
            | E::IsNotTrue(e)
            | E::IsFalse(e)
            | E::IsNotFalse(e)
            | E::IsUnknown(e)
            | E::IsNotUnknown(e) => self.walk_expr(e, scopes),
            E::IsDistinctFrom(a, b) | E::IsNotDistinctFrom(a, b) => {
                self.walk_expr(a, scopes);
                self.walk_expr(b, scopes);
            }
            E::InList { expr, list, .. } => {
                self.keyword("in");
                self.walk_expr(expr, scopes);
                for e in list {
                    self.walk_expr(e, scopes);
                }
            }
            E::InSubquery { expr, subquery, .. } => {
                self.keyword("in");
                self.walk_expr(expr, scopes);
                self.walk_query(subquery, scopes);
            }
            E::InUnnest {
                expr, array_expr, ..
            } => {
                self.keyword("in");
                self.walk_expr(expr, scopes);
                self.walk_expr(array_expr, scopes);
            }
            E::Between {
                expr, low, high, ..
            } => {
                self.keyword("between");
                self.walk_expr(expr, scopes);
                self.walk_expr(low, scopes);
                self.walk_expr(high, scopes);
            }
            E::Like { expr, pattern, .. }
            | E::ILike { expr, pattern, .. }
            | E::SimilarTo { expr, pattern, .. }
            | E::RLike { expr, pattern, .. } => {
                self.keyword("like");
                self.walk_expr(expr, scopes);
                self.walk_expr(pattern, scopes);
            }
            E::Cast { expr, .. } => {
                self.keyword("cast");
                self.walk_expr(expr, scopes);
            }
            E::Extract { expr, .. }
            | E::Ceil { expr, .. }
            | E::Floor { expr, .. }
            | E::Collate { expr, .. } => self.walk_expr(expr, scopes),
            E::Position { expr, r#in } => {
                self.walk_expr(expr, scopes);
                self.walk_expr(r#in, scopes);
            }
            E::Substring {
                expr,
                substring_from,
                substring_for,
                ..
            } => {
                self.walk_expr(expr, scopes);
                if let Some(e) = substring_from {
                    self.walk_expr(e, scopes);
                }
                if let Some(e) = substring_for {
                    self.walk_expr(e, scopes);
                }
            }
            E::Trim {
                expr,
                trim_what,
                trim_characters,
                ..
            } => {
                self.walk_expr(expr, scopes);
                if let Some(e) = trim_what {
                    self.walk_expr(e, scopes);
                }
                if let Some(es) = trim_characters {
                    for e in es {
                        self.walk_expr(e, scopes);
                    }
                }
            }
            E::Function(f) => self.walk_function(f, scopes),
            E::Case {
                operand,
                conditions,
                results,
                else_result,
            } => {
                self.keyword("case");
                if let Some(e) = operand {
                    self.walk_expr(e, scopes);
                }
                for e in conditions.iter().chain(results.iter()) {
                    self.walk_expr(e, scopes);
                }
                if let Some(e) = else_result {
                    self.walk_expr(e, scopes);
                }
            }
            E::Exists { subquery, .. } => {
                self.keyword("exists");
                self.walk_query(subquery, scopes);
            }
            E::Subquery(q) => self.walk_query(q, scopes),
            E::AnyOp { left, right, .. } | E::AllOp { left, right, .. } => {
                self.walk_expr(left, scopes);
                self.walk_expr(right, scopes);
            }
            E::Tuple(es) => {
                for e in es {
                    self.walk_expr(e, scopes);
                }
            }
            E::GroupingSets(sets) | E::Cube(sets) | E::Rollup(sets) => {
                for group in sets {
                    for e in group {
                        self.walk_expr(e, scopes);
                    }
                }
            }
            E::Interval(interval) => self.walk_expr(&interval.value, scopes),
            // Literals, wildcards and dialect-specific constructs carry no
            // schema references we track.
            _ => {}
        }
    }
}

/// Clone a scope slice (scopes are small alias maps).
trait ToVecCloned {
    fn to_vec_cloned(&self) -> Vec<Scope>;
}

impl ToVecCloned for [Scope] {
    fn to_vec_cloned(&self) -> Vec<Scope> {
        self.iter()
            .map(|s| Scope {
                aliases: s.aliases.clone(),
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Token-scan fallback
// ---------------------------------------------------------------------------

/// Approximate features for unparsable text: keywords from token patterns,
/// tables from words following FROM/JOIN that exist in the catalog, columns
/// from words that name a catalog column.
fn token_scan(
    sql: &str,
    catalog: &SchemaCatalog,
    exclude_relations: &BTreeSet<String>,
) -> QueryFeatures {
    let excluded: BTreeSet<String> = exclude_relations
        .iter()
        .map(|s| s.to_ascii_lowercase())
        .collect();
    let mut out = QueryFeatures::default();
    let words = word_tokens(sql);

    let mut kw = |k: &str| {
        out.sql_keywords.insert(k.to_string());
    };
    for (i, (w, paren)) in words.iter().enumerate() {
        let next = words.get(i + 1).map(|(w, _)| w.as_str());
        match w.as_str() {
            "select" | "from" | "where" | "having" | "limit" | "offset" | "distinct"
            | "union" | "intersect" | "except" | "with" | "case" | "cast" | "like" | "in"
            | "between" | "exists" | "over" | "window" => {
                if w == "offset" {
                    kw("limit");
                } else {
                    kw(w);
                    if w == "over" {
                        kw("window");
                    }
                }
            }
            "join" => kw("join"),
            "left" | "right" | "full" | "inner" | "cross" if next == Some("join") => {
                kw(&format!("{w}-join"));
            }
            "outer" => {}
            "group" | "order" | "partition" if next == Some("by") => {
                kw(&format!("{w}-by"));
            }
            "count" | "sum" | "avg" | "min" | "max" if *paren => {
                kw("aggregate");
                kw(w);
            }
            _ => {}
        }
    }

    let mut prev: Option<&str> = None;
    for (w, _) in &words {
        if matches!(prev, Some("from") | Some("join")) && catalog.has_table(w) && !excluded.contains(w)
        {
            out.tables.insert(w.clone());
        }
        prev = Some(w.as_str());
    }
    for (w, _) in &words {
        let owners = catalog.tables_with_column(w);
        if owners.is_empty() {
            continue;
        }
        out.columns.insert(w.clone());
        // Prefer types from tables the scan recovered; fall back to every
        // table owning the column.
        let scoped: Vec<&str> = owners
            .iter()
            .copied()
            .filter(|t| out.tables.contains(*t))
            .collect();
        let chosen = if scoped.is_empty() { owners } else { scoped };
        for t in chosen {
            if let Some(tag) = catalog.column_type(t, w) {
                out.data_types.insert(tag.as_str().to_string());
            }
        }
    }
    out
}

/// Lowercased word tokens plus whether each is immediately followed by `(`.
fn word_tokens(sql: &str) -> Vec<(String, bool)> {
    let bytes = sql.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() {
                let c = bytes[i] as char;
                if c.is_ascii_alphanumeric() || c == '_' {
                    i += 1;
                } else {
                    break;
                }
            }
            let word = sql[start..i].to_ascii_lowercase();
            let mut j = i;
            while j < bytes.len() && (bytes[j] as char).is_ascii_whitespace() {
                j += 1;
            }
            let paren = j < bytes.len() && bytes[j] == b'(';
            out.push((word, paren));
        } else {
            i += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::catalog::SchemaCatalog;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn toy_catalog() -> SchemaCatalog {
        let mut cat = SchemaCatalog::new();
        cat.add_column("purchase", "name", "TEXT");
        cat.add_column("purchase", "brand", "TEXT");
        cat.add_column("purchase", "category", "TEXT");
        cat.add_column("purchase", "pur_date", "DATE");
        cat.add_column("purchase", "price", "REAL");
        cat.add_column("store", "store_id", "INTEGER");
        cat.add_column("store", "city", "TEXT");
        cat.add_column("inventory", "store_id", "INTEGER");
        cat.add_column("inventory", "name", "TEXT");
        cat.add_column("inventory", "stock", "INTEGER");
        cat
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn simple_filter_query() {
        let f = extract_features(
            "SELECT name FROM purchase WHERE brand = 'Nike'",
            &toy_catalog(),
        )
        .unwrap();
        assert!(f.sql_keywords.is_superset(&set(&["select", "from", "where"])));
        assert_eq!(f.tables, set(&["purchase"]));
        assert_eq!(f.columns, set(&["brand", "name"]));
        assert_eq!(f.data_types, set(&["text"]));
    }

    #[test]
    fn aggregates_dates_and_floats() {
        let f = extract_features(
            "SELECT SUM(price) FROM purchase WHERE brand = 'Polo' AND pur_date >= '2024-01-01'",
            &toy_catalog(),
        )
        .unwrap();
        assert!(f
            .sql_keywords
            .is_superset(&set(&["select", "from", "where", "aggregate", "sum"])));
        assert_eq!(f.tables, set(&["purchase"]));
        assert_eq!(f.columns, set(&["brand", "price", "pur_date"]));
        assert_eq!(f.data_types, set(&["date", "float", "text"]));
    }

    #[test]
    fn joins_resolve_aliases() {
        let f = extract_features(
            "SELECT s.city, SUM(i.stock) FROM store s INNER JOIN inventory i \
             ON s.store_id = i.store_id GROUP BY s.city ORDER BY 2 DESC LIMIT 3",
            &toy_catalog(),
        )
        .unwrap();
        assert!(f.sql_keywords.is_superset(&set(&[
            "select",
            "from",
            "join",
            "inner-join",
            "group-by",
            "order-by",
            "limit",
            "aggregate",
            "sum",
        ])));
        assert_eq!(f.tables, set(&["inventory", "store"]));
        assert_eq!(f.columns, set(&["city", "stock", "store_id"]));
        assert_eq!(f.data_types, set(&["int", "text"]));
    }

    #[test]
    fn cte_names_are_not_tables() {
        let f = extract_features(
            "WITH q AS (SELECT name, price FROM purchase) SELECT name FROM q WHERE price > 10",
            &toy_catalog(),
        )
        .unwrap();
        assert!(f.sql_keywords.contains("with"));
        assert_eq!(f.tables, set(&["purchase"]));
        assert!(f.columns.is_superset(&set(&["name", "price"])));
    }

    #[test]
    fn excluded_relations_are_not_tables() {
        // A CTE body extracted standalone, with sibling CTE names excluded.
        let excl: BTreeSet<String> = set(&["quarterone"]);
        let f = extract_features_scoped(
            "SELECT name FROM quarterone WHERE price > 5",
            &toy_catalog(),
            &excl,
        )
        .unwrap();
        assert!(f.tables.is_empty());
        assert!(f.columns.contains("name"));
    }

    #[test]
    fn subqueries_and_constructs() {
        let f = extract_features(
            "SELECT CASE WHEN price BETWEEN 1 AND 9 THEN 'cheap' ELSE 'dear' END \
             FROM purchase WHERE name LIKE 'Nike%' AND category IN (SELECT city FROM store) \
             AND EXISTS (SELECT 1 FROM inventory) AND CAST(price AS INTEGER) > 0",
            &toy_catalog(),
        )
        .unwrap();
        assert!(f.sql_keywords.is_superset(&set(&[
            "case", "between", "like", "in", "exists", "cast",
        ])));
        assert_eq!(f.tables, set(&["inventory", "purchase", "store"]));
    }

    #[test]
    fn window_functions() {
        let f = extract_features(
            "SELECT name, SUM(price) OVER (PARTITION BY category) FROM purchase",
            &toy_catalog(),
        )
        .unwrap();
        assert!(f
            .sql_keywords
            .is_superset(&set(&["over", "window", "partition-by", "aggregate", "sum"])));
        assert!(f.columns.is_superset(&set(&["category", "name", "price"])));
    }

    #[test]
    fn union_and_distinct() {
        let f = extract_features(
            "SELECT DISTINCT name FROM purchase UNION SELECT name FROM inventory",
            &toy_catalog(),
        )
        .unwrap();
        assert!(f.sql_keywords.is_superset(&set(&["distinct", "union"])));
        assert_eq!(f.tables, set(&["inventory", "purchase"]));
    }

    #[test]
    fn unparsable_text_degrades_to_token_scan() {
        let f = extract_features_lossy(
            "SELEC name FROM purchase WHERE brand = 'Nike' GROUP BY",
            &toy_catalog(),
            &BTreeSet::new(),
        );
        assert!(f.sql_keywords.is_superset(&set(&["from", "where", "group-by"])));
        assert_eq!(f.tables, set(&["purchase"]));
        assert!(f.columns.is_superset(&set(&["brand", "name"])));
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(extract_features("  ", &toy_catalog()).is_err());
    }

    #[test]
    fn vocabulary_keywords_only() {
        // Every keyword the walker can emit is in the vocabulary (the
        // debug_assert in `keyword` backs this at runtime; here we check the
        // vocabulary itself is deduplicated and lowercase).
        let mut seen = BTreeSet::new();
        for k in KEYWORD_VOCABULARY {
            assert_eq!(k.to_ascii_lowercase(), *k);
            assert!(seen.insert(*k), "duplicate vocabulary entry {k}");
        }
    }

    /// Generator-backed oracle: build single-table queries clause by clause,
    /// recording the expected feature sets while generating, then compare
    /// against the extractor.
    #[test]
    fn generated_corpus_matches_recorded_ground_truth() {
        let cat = toy_catalog();
        let tables: Vec<(&str, Vec<(&str, &str)>)> = vec![
            (
                "purchase",
                vec![
                    ("name", "text"),
                    ("brand", "text"),
                    ("category", "text"),
                    ("pur_date", "date"),
                    ("price", "float"),
                ],
            ),
            ("store", vec![("store_id", "int"), ("city", "text")]),
            (
                "inventory",
                vec![("store_id", "int"), ("name", "text"), ("stock", "int")],
            ),
        ];
        let mut rng = StdRng::seed_from_u64(7);
        for case in 0..200 {
            let (table, cols) = &tables[rng.gen_range(0..tables.len())];
            let mut want = QueryFeatures::default();
            let record = |want: &mut QueryFeatures, col: &str, ty: &str| {
                want.columns.insert(col.to_string());
                want.data_types.insert(ty.to_string());
            };
            want.sql_keywords.insert("select".into());
            want.sql_keywords.insert("from".into());
            want.tables.insert(table.to_string());

            let (pc, pt) = cols[rng.gen_range(0..cols.len())];
            let mut sql = if rng.gen_bool(0.3) {
                let agg = ["count", "sum", "avg", "min", "max"][rng.gen_range(0..5)];
                want.sql_keywords.insert("aggregate".into());
                want.sql_keywords.insert(agg.into());
                record(&mut want, pc, pt);
                format!("SELECT {agg}({pc}) FROM {table}")
            } else {
                record(&mut want, pc, pt);
                format!("SELECT {pc} FROM {table}")
            };
            if rng.gen_bool(0.6) {
                let (wc, wt) = cols[rng.gen_range(0..cols.len())];
                record(&mut want, wc, wt);
                want.sql_keywords.insert("where".into());
                if rng.gen_bool(0.25) {
                    want.sql_keywords.insert("like".into());
                    sql.push_str(&format!(" WHERE {wc} LIKE 'x%'"));
                } else if rng.gen_bool(0.25) {
                    want.sql_keywords.insert("between".into());
                    sql.push_str(&format!(" WHERE {wc} BETWEEN 1 AND 5"));
                } else {
                    sql.push_str(&format!(" WHERE {wc} > 3"));
                }
            }
            if rng.gen_bool(0.4) {
                let (gc, gt) = cols[rng.gen_range(0..cols.len())];
                record(&mut want, gc, gt);
                want.sql_keywords.insert("group-by".into());
                sql.push_str(&format!(" GROUP BY {gc}"));
            }
            if rng.gen_bool(0.3) {
                let (oc, ot) = cols[rng.gen_range(0..cols.len())];
                record(&mut want, oc, ot);
                want.sql_keywords.insert("order-by".into());
                sql.push_str(&format!(" ORDER BY {oc}"));
            }
            if rng.gen_bool(0.3) {
                want.sql_keywords.insert("limit".into());
                sql.push_str(" LIMIT 7");
            }
            let got = extract_features(&sql, &cat)
                .unwrap_or_else(|e| panic!("case {case}: {sql}: {e}"));
            assert_eq!(got, want, "case {case}: {sql}");
        }
    }
}
