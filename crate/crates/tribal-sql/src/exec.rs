//! Sandboxed SQL execution against SQLite and execution-equivalence
//! checking between result sets.
//!
//! [`exec_sql`] never propagates SQL-level problems as Rust errors: syntax
//! errors, missing tables, write attempts on a read-only handle, and
//! timeouts all come back as [`Outcome::Failure`] with a message, so agent
//! loops can observe and react to them. Only connection-level breakage is a
//! hard error.
//!
//! Equivalence treats results as **multisets of rows with significant
//! column order**: row order is ignored, duplicate multiplicity matters,
//! numbers compare with a relative tolerance of about 1e-6 (seven
//! significant digits), strings compare after trimming surrounding
//! whitespace, and two NULLs are equal. Two failed executions are
//! equivalent to each other; a failure never equals a row set.

use std::collections::HashMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sql::catalog::SchemaCatalog;

/// Default statement timeout.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// One cell of a result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cell {
    Null,
    Int(i64),
    Float(f64),
    Text(String),
    Blob(Vec<u8>),
}

/// Result of executing one statement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    /// Ordered rows as returned by the engine.
    Rows(Vec<Vec<Cell>>),
    /// Engine-level failure (syntax, schema, constraint, timeout, ...).
    Failure(String),
}

/// Execution outcome plus bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResult {
    pub outcome: Outcome,
    pub row_count: usize,
    pub elapsed_ms: u64,
}

impl ExecResult {
    /// Build a result from rows (used by tests and replay tooling).
    pub fn from_rows(rows: Vec<Vec<Cell>>) -> Self {
        let row_count = rows.len();
        ExecResult {
            outcome: Outcome::Rows(rows),
            row_count,
            elapsed_ms: 0,
        }
    }

    /// Build a failure result.
    pub fn from_failure(message: impl Into<String>) -> Self {
        ExecResult {
            outcome: Outcome::Failure(message.into()),
            row_count: 0,
            elapsed_ms: 0,
        }
    }

    /// True when execution failed.
    pub fn is_failure(&self) -> bool {
        matches!(self.outcome, Outcome::Failure(_))
    }

    /// Render a bounded preview for prompt contexts: up to `max_rows` rows
    /// plus a total count, or the failure message.
    pub fn preview(&self, max_rows: usize) -> String {
        match &self.outcome {
            Outcome::Failure(msg) => format!("execution failed: {msg}"),
            Outcome::Rows(rows) => {
                let mut out = format!("{} row(s)", rows.len());
                for row in rows.iter().take(max_rows) {
                    out.push('\n');
                    let rendered: Vec<String> = row
                        .iter()
                        .map(|c| match c {
                            Cell::Null => "NULL".to_string(),
                            Cell::Int(i) => i.to_string(),
                            Cell::Float(f) => f.to_string(),
                            Cell::Text(s) => s.clone(),
                            Cell::Blob(b) => format!("<blob {} bytes>", b.len()),
                        })
                        .collect();
                    out.push_str(&rendered.join(" | "));
                }
                if rows.len() > max_rows {
                    out.push_str(&format!("\n... ({} more)", rows.len() - max_rows));
                }
                out
            }
        }
    }
}

/// A SQLite connection with a statement timeout.
///
/// Handles are per-worker: the wrapped connection is not shareable across
/// threads.
pub struct DatabaseHandle {
    conn: Connection,
    timeout: Duration,
}

impl DatabaseHandle {
    /// Open read-write (setup, fixtures, discovery exploration databases).
    pub fn open(path: &Path) -> Result<Self> {
        let conn = Connection::open(path)
            .map_err(|e| Error::Connection(format!("{}: {e}", path.display())))?;
        Ok(DatabaseHandle {
            conn,
            timeout: DEFAULT_TIMEOUT,
        })
    }

    /// Open read-only: any write the SQL attempts becomes a [`Outcome::Failure`].
    pub fn open_read_only(path: &Path) -> Result<Self> {
        let conn = Connection::open_with_flags(
            path,
            OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
        )
        .map_err(|e| Error::Connection(format!("{}: {e}", path.display())))?;
        Ok(DatabaseHandle {
            conn,
            timeout: DEFAULT_TIMEOUT,
        })
    }

    /// Fresh in-memory database (tests, scratch work).
    pub fn in_memory() -> Result<Self> {
        let conn =
            Connection::open_in_memory().map_err(|e| Error::Connection(e.to_string()))?;
        Ok(DatabaseHandle {
            conn,
            timeout: DEFAULT_TIMEOUT,
        })
    }

    /// Replace the statement timeout.
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Run a batch of setup statements (DDL + inserts). Not routed through
    /// the timeout/failure machinery: setup mistakes should fail loudly.
    pub fn execute_batch(&self, sql: &str) -> Result<()> {
        self.conn
            .execute_batch(sql)
            .map_err(|e| Error::Connection(e.to_string()))
    }

    /// Build a [`SchemaCatalog`] from the live schema.
    pub fn catalog(&self) -> Result<SchemaCatalog> {
        let mut catalog = SchemaCatalog::new();
        let mut stmt = self
            .conn
            .prepare(
                "SELECT name FROM sqlite_master WHERE type IN ('table', 'view') \
                 AND name NOT LIKE 'sqlite_%' ORDER BY name",
            )
            .map_err(|e| Error::Connection(e.to_string()))?;
        let tables: Vec<String> = stmt
            .query_map([], |row| row.get::<_, String>(0))
            .map_err(|e| Error::Connection(e.to_string()))?
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Connection(e.to_string()))?;
        for table in tables {
            let mut info = self
                .conn
                .prepare(&format!("PRAGMA table_info({})", quote_ident(&table)))
                .map_err(|e| Error::Connection(e.to_string()))?;
            let cols: Vec<(String, String)> = info
                .query_map([], |row| {
                    Ok((row.get::<_, String>(1)?, row.get::<_, String>(2)?))
                })
                .map_err(|e| Error::Connection(e.to_string()))?
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Connection(e.to_string()))?;
            for (name, declared) in cols {
                catalog.add_column(&table, &name, &declared);
            }
        }
        if catalog.is_empty() {
            return Err(Error::UnknownRelation(
                "database contains no user tables".into(),
            ));
        }
        Ok(catalog)
    }
}

fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

/// Execute one SQL statement, capturing rows or the failure message.
pub fn exec_sql(sql: &str, db: &DatabaseHandle) -> ExecResult {
    let started = Instant::now();
    if sql.trim().is_empty() {
        return ExecResult::from_failure("empty sql text");
    }

    let deadline = started + db.timeout;
    db.conn
        .progress_handler(1_000, Some(move || Instant::now() >= deadline));
    let mut result = run_statement(sql, &db.conn);
    db.conn.progress_handler(0, None::<fn() -> bool>);

    if let Outcome::Failure(msg) = &result {
        if msg.contains("interrupted") {
            result = Outcome::Failure(format!(
                "timeout: statement exceeded {} ms",
                db.timeout.as_millis()
            ));
        }
    }
    let row_count = match &result {
        Outcome::Rows(rows) => rows.len(),
        Outcome::Failure(_) => 0,
    };
    ExecResult {
        outcome: result,
        row_count,
        elapsed_ms: started.elapsed().as_millis() as u64,
    }
}

fn run_statement(sql: &str, conn: &Connection) -> Outcome {
    let mut stmt = match conn.prepare(sql) {
        Ok(s) => s,
        Err(e) => return Outcome::Failure(e.to_string()),
    };
    let ncols = stmt.column_count();
    let mut rows = match stmt.query([]) {
        Ok(r) => r,
        Err(e) => return Outcome::Failure(e.to_string()),
    };
    let mut out: Vec<Vec<Cell>> = Vec::new();
    loop {
        match rows.next() {
            Ok(Some(row)) => {
                let mut cells = Vec::with_capacity(ncols);
                for i in 0..ncols {
                    let cell = match row.get_ref(i) {
                        Ok(ValueRef::Null) => Cell::Null,
                        Ok(ValueRef::Integer(v)) => Cell::Int(v),
                        Ok(ValueRef::Real(v)) => Cell::Float(v),
                        Ok(ValueRef::Text(t)) => {
                            Cell::Text(String::from_utf8_lossy(t).into_owned())
                        }
                        Ok(ValueRef::Blob(b)) => Cell::Blob(b.to_vec()),
                        Err(e) => return Outcome::Failure(e.to_string()),
                    };
                    cells.push(cell);
                }
                out.push(cells);
            }
            Ok(None) => break,
            Err(e) => return Outcome::Failure(e.to_string()),
        }
    }
    Outcome::Rows(out)
}

// ---------------------------------------------------------------------------
// Equivalence
// ---------------------------------------------------------------------------

/// Whether column order participates in equivalence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnOrder {
    /// Column order is part of the answer (default).
    Significant,
    /// Results are also equivalent under a column permutation (bounded
    /// search, practical for result arities up to about 6).
    Insensitive,
}

/// Why two results were or were not equivalent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquivalenceReason {
    Equal,
    BothFailed,
    OneSideFailed,
    ArityMismatch,
    RowMultisetMismatch,
}

/// Verdict plus reason.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub equivalent: bool,
    pub reason: EquivalenceReason,
}

/// Comparison key for one cell under the normalization rules.
///
/// Numbers (ints up to 2^53 and all floats) share a key formatted to seven
/// significant digits, which realizes the ~1e-6 relative tolerance and
/// makes `1` equal to `1.0`. Larger integers keep exact keys. Strings are
/// trimmed; NULL is its own key; blobs compare byte-exact via hex.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CellKey {
    Null,
    Num(String),
    BigInt(i64),
    Text(String),
    Blob(String),
}

/// Largest integer magnitude a f64 holds exactly.
const EXACT_F64_INT: i64 = 1 << 53;

/// Normalize one cell to its comparison key.
pub fn cell_key(cell: &Cell) -> CellKey {
    match cell {
        Cell::Null => CellKey::Null,
        Cell::Int(i) => {
            if i.abs() <= EXACT_F64_INT {
                CellKey::Num(num_key(*i as f64))
            } else {
                CellKey::BigInt(*i)
            }
        }
        Cell::Float(f) => CellKey::Num(num_key(*f)),
        Cell::Text(s) => CellKey::Text(s.trim().to_string()),
        Cell::Blob(b) => CellKey::Blob(hex(b)),
    }
}

fn num_key(f: f64) -> String {
    if f.is_nan() {
        return "nan".to_string();
    }
    // Collapse the two zero signs before formatting.
    let f = if f == 0.0 { 0.0 } else { f };
    format!("{f:.6e}")
}

fn hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Normalize a whole row.
pub fn row_key(row: &[Cell]) -> Vec<CellKey> {
    row.iter().map(cell_key).collect()
}

/// Execution equivalence with column order significant.
pub fn equivalent(a: &ExecResult, b: &ExecResult) -> EquivalenceReport {
    equivalent_with(a, b, ColumnOrder::Significant)
}

/// Execution equivalence with an explicit column-order policy.
pub fn equivalent_with(a: &ExecResult, b: &ExecResult, order: ColumnOrder) -> EquivalenceReport {
    let (rows_a, rows_b) = match (&a.outcome, &b.outcome) {
        (Outcome::Failure(_), Outcome::Failure(_)) => {
            return EquivalenceReport {
                equivalent: true,
                reason: EquivalenceReason::BothFailed,
            }
        }
        (Outcome::Failure(_), _) | (_, Outcome::Failure(_)) => {
            return EquivalenceReport {
                equivalent: false,
                reason: EquivalenceReason::OneSideFailed,
            }
        }
        (Outcome::Rows(ra), Outcome::Rows(rb)) => (ra, rb),
    };

    if rows_a.len() != rows_b.len() {
        return EquivalenceReport {
            equivalent: false,
            reason: EquivalenceReason::RowMultisetMismatch,
        };
    }
    if rows_a.is_empty() {
        return EquivalenceReport {
            equivalent: true,
            reason: EquivalenceReason::Equal,
        };
    }
    let arity_a = rows_a[0].len();
    let arity_b = rows_b[0].len();
    if arity_a != arity_b {
        return EquivalenceReport {
            equivalent: false,
            reason: EquivalenceReason::ArityMismatch,
        };
    }

    if multisets_equal(rows_a, rows_b, None) {
        return EquivalenceReport {
            equivalent: true,
            reason: EquivalenceReason::Equal,
        };
    }
    if order == ColumnOrder::Insensitive && arity_a <= 6 {
        let mut perm: Vec<usize> = (0..arity_a).collect();
        if any_permutation(&mut perm, 0, &mut |p| multisets_equal(rows_a, rows_b, Some(p))) {
            return EquivalenceReport {
                equivalent: true,
                reason: EquivalenceReason::Equal,
            };
        }
    }
    EquivalenceReport {
        equivalent: false,
        reason: EquivalenceReason::RowMultisetMismatch,
    }
}

/// Multiset comparison of normalized rows; `perm`, when given, reorders the
/// columns of `b` before keying.
fn multisets_equal(a: &[Vec<Cell>], b: &[Vec<Cell>], perm: Option<&[usize]>) -> bool {
    let mut counts: HashMap<Vec<CellKey>, i64> = HashMap::with_capacity(a.len());
    for row in a {
        *counts.entry(row_key(row)).or_insert(0) += 1;
    }
    for row in b {
        let key = match perm {
            None => row_key(row),
            Some(p) => p.iter().map(|&i| cell_key(&row[i])).collect(),
        };
        match counts.get_mut(&key) {
            Some(c) => {
                *c -= 1;
                if *c == 0 {
                    counts.remove(&key);
                }
            }
            None => return false,
        }
    }
    counts.is_empty()
}

/// Visit permutations of `perm[k..]` until `f` returns true.
fn any_permutation(perm: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize]) -> bool) -> bool {
    if k == perm.len() {
        return f(perm);
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        if any_permutation(perm, k + 1, f) {
            perm.swap(k, i);
            return true;
        }
        perm.swap(k, i);
    }
    false
}
