//! Shared fixtures for the integration suite: a small retail database,
//! canned reply builders for the scripted gateway, and the worked
//! brand-vs-name example the suite keeps returning to.

#![allow(dead_code)]

use std::sync::Arc;

use tribal_sql::exec::DatabaseHandle;
use tribal_sql::gateway::scripted::ScriptedBackend;
use tribal_sql::gateway::{Gateway, GatewayLimits};
use tribal_sql::store::Provenance;

/// Questions and queries for the brand-vs-name scenario: `brand` is mostly
/// NULL, so correct queries match a prefix of `name` instead.
pub const Q_NIKE: &str = "How many Nike purchases are there?";
pub const Q_POLO: &str = "What is the total price of Polo purchases?";
pub const WRONG_NIKE: &str = "SELECT COUNT(*) FROM purchase WHERE brand = 'Nike'";
pub const GOLD_NIKE: &str = "SELECT COUNT(*) FROM purchase WHERE name LIKE 'Nike%'";
pub const WRONG_POLO: &str = "SELECT SUM(price) FROM purchase WHERE brand = 'Polo'";
pub const GOLD_POLO: &str = "SELECT SUM(price) FROM purchase WHERE name LIKE 'Polo%'";

/// Three-row `purchase` table; brand is populated for one row only.
pub fn toy_db() -> DatabaseHandle {
    let db = DatabaseHandle::in_memory().expect("in-memory db");
    db.execute_batch(
        "CREATE TABLE purchase (
             name     TEXT NOT NULL,
             brand    TEXT,
             category TEXT NOT NULL,
             price    REAL NOT NULL,
             pur_date DATE
         );
         INSERT INTO purchase VALUES
             ('Nike Air Max',   NULL,     'shoes',   120.0, '2024-02-10'),
             ('Polo Shirt XL',  NULL,     'apparel',  60.0, '2024-05-04'),
             ('Adidas Gazelle', 'Adidas', 'shoes',    90.0, '2023-11-20');",
    )
    .expect("seed purchase table");
    db
}

/// Wrap a scripted backend in a gateway with default limits.
pub fn gateway(backend: ScriptedBackend) -> Gateway {
    Gateway::new(Arc::new(backend), GatewayLimits::default())
}

/// A well-formed final agent reply carrying `sql`.
pub fn agent_reply(sql: &str) -> String {
    format!("status: final\n```sql\n{sql}\n```")
}

/// A single-clause edit proposal for the repair loop.
pub fn edit_json(sql: &str, delta: &str) -> String {
    serde_json::json!({ "sql": sql, "delta": delta }).to_string()
}

/// An exploration request for the repair loop.
pub fn explore_json(sql: &str) -> String {
    serde_json::json!({ "explore": sql }).to_string()
}

/// A kept-indices reply for reflection and knowledge filtering.
pub fn kept_json(kept: &[usize]) -> String {
    serde_json::json!({ "kept": kept }).to_string()
}

/// A knowledge-row reply; each dimension is `"*"` or a value list.
pub fn tk_row_json(
    knowledge: &str,
    keywords: &[&str],
    tables: &[&str],
    columns: &[&str],
    data_types: &[&str],
) -> String {
    fn dim(values: &[&str]) -> serde_json::Value {
        if values.is_empty() {
            serde_json::Value::String("*".to_string())
        } else {
            serde_json::json!(values)
        }
    }
    serde_json::json!({
        "knowledge": knowledge,
        "condition": {
            "sql_keywords": dim(keywords),
            "tables": dim(tables),
            "columns": dim(columns),
            "data_types": dim(data_types),
        }
    })
    .to_string()
}

/// Placeholder provenance for rows inserted directly by tests.
pub fn test_provenance() -> Provenance {
    Provenance {
        source_question_id: "fixture".to_string(),
        correction_statement: "fixture".to_string(),
        created_at: "2026-01-01T00:00:00Z".to_string(),
        non_atomic: false,
    }
}
