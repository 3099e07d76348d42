//! Tribal knowledge for text-to-SQL agents.
//!
//! This crate turns an agent's past mistakes on a database into a store of
//! reusable *knowledge rows* — short natural-language statements paired with
//! structured applicability conditions over four SQL feature dimensions
//! (keywords, tables, columns, data types). At answer time the store is
//! consulted per CTE of the agent's draft query and matching statements are
//! summarized into corrective feedback, without retraining or prompt surgery
//! on the underlying agent.
//!
//! The crate is organized as a pipeline:
//!
//! * [`sql`] — schema catalog, feature extraction, CTE segmentation, and
//!   clause-level diffing of SQL text.
//! * [`exec`] — sandboxed SQLite execution and execution-equivalence checks.
//! * [`gateway`] — the single LLM boundary (HTTP or scripted playback).
//! * [`store`] — the knowledge store: rows, match predicate, retrieval.
//! * [`discovery`] — mining knowledge rows from past mistakes.
//! * [`agent`] — the base ReAct-style agent and its feedback-augmented form.
//! * [`baselines`] — episodic-memory and naive-knowledge comparison systems.
//! * [`eval`] — dataset handling, accuracy/robustness metrics, reports.
//! * [`config`] — layered run configuration (CLI > env > file > defaults).

pub mod agent;
pub mod baselines;
pub mod config;
pub mod discovery;
pub mod error;
pub mod eval;
pub mod exec;
pub mod gateway;
pub mod prompts;
pub mod sql;
pub mod store;

pub use error::{Error, Result};
