//! Schema catalog: the table/column/type universe used for feature
//! extraction, condition validation, and prompt rendering.
//!
//! A catalog can be loaded from a live SQLite database (see
//! [`crate::exec::DatabaseHandle::catalog`]) or from a line-delimited JSON
//! file of `{table, column, declared_type}` records. All names are
//! case-normalized to lowercase; declared types are folded into a small
//! closed taxonomy so that conditions written against one database dialect
//! remain comparable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed taxonomy of column types used by the feature dimension
/// `data_types`. Declared SQL types are folded into these tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TypeTag {
    Int,
    Float,
    Text,
    Date,
    Bool,
    Blob,
    Unknown,
}

/// Every tag in the taxonomy, in canonical order.
pub const TYPE_TAXONOMY: &[TypeTag] = &[
    TypeTag::Int,
    TypeTag::Float,
    TypeTag::Text,
    TypeTag::Date,
    TypeTag::Bool,
    TypeTag::Blob,
    TypeTag::Unknown,
];

impl TypeTag {
    /// Fold a declared SQL type (e.g. `VARCHAR(40)`, `NUMERIC(10,2)`,
    /// `TIMESTAMP`) into the taxonomy.
    ///
    /// The rules follow SQLite's affinity conventions extended with
    /// date/bool detection: the declared text is uppercased and matched on
    /// substrings, with the more specific categories (date, bool) checked
    /// before the broad affinity buckets.
    pub fn from_declared(declared: &str) -> TypeTag {
        let d = declared.trim().to_ascii_uppercase();
        if d.is_empty() {
            return TypeTag::Unknown;
        }
        if d.contains("BOOL") {
            return TypeTag::Bool;
        }
        if d.contains("DATE") || d.contains("TIME") || d.contains("YEAR") {
            return TypeTag::Date;
        }
        if d.contains("INT") {
            return TypeTag::Int;
        }
        if d.contains("CHAR") || d.contains("CLOB") || d.contains("TEXT") || d.contains("STRING") {
            return TypeTag::Text;
        }
        if d.contains("BLOB") || d.contains("BINARY") {
            return TypeTag::Blob;
        }
        if d.contains("REAL")
            || d.contains("FLOA")
            || d.contains("DOUB")
            || d.contains("DEC")
            || d.contains("NUMERIC")
            || d.contains("MONEY")
        {
            return TypeTag::Float;
        }
        TypeTag::Unknown
    }

    /// Canonical lowercase name of the tag.
    pub fn as_str(&self) -> &'static str {
        match self {
            TypeTag::Int => "int",
            TypeTag::Float => "float",
            TypeTag::Text => "text",
            TypeTag::Date => "date",
            TypeTag::Bool => "bool",
            TypeTag::Blob => "blob",
            TypeTag::Unknown => "unknown",
        }
    }

    /// Parse a canonical tag name.
    pub fn parse(name: &str) -> Option<TypeTag> {
        TYPE_TAXONOMY.iter().copied().find(|t| t.as_str() == name)
    }
}

impl fmt::Display for TypeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One column record in a catalog file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnRecord {
    pub table: String,
    pub column: String,
    pub declared_type: String,
}

/// Lookup structure over a database schema.
///
/// Tables and columns are stored lowercased; iteration order is
/// deterministic (sorted by name).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SchemaCatalog {
    tables: BTreeMap<String, BTreeMap<String, TypeTag>>,
    declared: BTreeMap<(String, String), String>,
}

impl SchemaCatalog {
    /// Empty catalog.
    pub fn new() -> Self {
        SchemaCatalog::default()
    }

    /// Register a column. Repeated registration overwrites the type.
    pub fn add_column(&mut self, table: &str, column: &str, declared_type: &str) {
        let t = table.trim().to_ascii_lowercase();
        let c = column.trim().to_ascii_lowercase();
        self.tables
            .entry(t.clone())
            .or_default()
            .insert(c.clone(), TypeTag::from_declared(declared_type));
        self.declared.insert((t, c), declared_type.to_string());
    }

    /// Load from a line-delimited JSON file of [`ColumnRecord`]s.
    pub fn from_file(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut catalog = SchemaCatalog::new();
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ColumnRecord = serde_json::from_str(&line).map_err(|e| {
                Error::Validation(format!(
                    "{}:{}: bad catalog record: {e}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            catalog.add_column(&record.table, &record.column, &record.declared_type);
        }
        if catalog.tables.is_empty() {
            return Err(Error::Validation(format!(
                "{}: catalog file defines no columns",
                path.display()
            )));
        }
        Ok(catalog)
    }

    /// True when the catalog has no tables.
    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    /// Whether `name` (case-insensitive) is a table in this catalog.
    pub fn has_table(&self, name: &str) -> bool {
        self.tables.contains_key(&name.trim().to_ascii_lowercase())
    }

    /// Whether `table.column` exists.
    pub fn has_column(&self, table: &str, column: &str) -> bool {
        self.tables
            .get(&table.trim().to_ascii_lowercase())
            .map(|cols| cols.contains_key(&column.trim().to_ascii_lowercase()))
            .unwrap_or(false)
    }

    /// Normalized type of `table.column`, if known.
    pub fn column_type(&self, table: &str, column: &str) -> Option<TypeTag> {
        self.tables
            .get(&table.trim().to_ascii_lowercase())
            .and_then(|cols| cols.get(&column.trim().to_ascii_lowercase()))
            .copied()
    }

    /// All tables, sorted.
    pub fn tables(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(|s| s.as_str())
    }

    /// Columns of one table, sorted.
    pub fn columns(&self, table: &str) -> impl Iterator<Item = (&str, TypeTag)> {
        self.tables
            .get(&table.trim().to_ascii_lowercase())
            .into_iter()
            .flat_map(|cols| cols.iter().map(|(c, t)| (c.as_str(), *t)))
    }

    /// Tables that contain a column with this name, sorted.
    pub fn tables_with_column(&self, column: &str) -> Vec<&str> {
        let c = column.trim().to_ascii_lowercase();
        self.tables
            .iter()
            .filter(|(_, cols)| cols.contains_key(&c))
            .map(|(t, _)| t.as_str())
            .collect()
    }

    /// Union of all column names in the catalog.
    pub fn all_columns(&self) -> BTreeSet<&str> {
        self.tables
            .values()
            .flat_map(|cols| cols.keys().map(|c| c.as_str()))
            .collect()
    }

    /// Compact `table(column type, ...)` rendering for prompts.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (table, cols) in &self.tables {
            out.push_str(table);
            out.push('(');
            let mut first = true;
            for (col, tag) in cols {
                if !first {
                    out.push_str(", ");
                }
                first = false;
                out.push_str(col);
                out.push(' ');
                out.push_str(tag.as_str());
            }
            out.push_str(")\n");
        }
        out
    }
}
