//! Evaluation harness: datasets, seeded splits, per-question scoring,
//! robustness accounting, and error classification.
//!
//! Correctness is execution equivalence between the agent's final query
//! and the gold query on the same database. Each question runs against a
//! forked gateway so its LLM-call count is exact; a configurable number of
//! repeat runs absorbs backend nondeterminism (the scripted backend is
//! deterministic, so repeats agree byte-for-byte after volatile fields are
//! normalized).

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{
    run_agent_with_preamble, run_augmented_agent, AgentLimits, AgentTrace, AugmentOptions,
    TraceStatus,
};
use crate::baselines::{memory_preamble, memory_retrieve, MemoryStore};
use crate::error::{Error, Result};
use crate::exec::{equivalent, exec_sql, DatabaseHandle, ExecResult, Outcome};
use crate::gateway::Gateway;
use crate::prompts;
use crate::sql::catalog::SchemaCatalog;
use crate::sql::features::extract_features_lossy;
use crate::store::TkStore;

/// One benchmark question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub question_id: String,
    pub question: String,
    pub gold_sql: String,
}

/// Load dataset items from a JSON array file or a JSON-lines file.
pub fn load_dataset(path: &Path) -> Result<Vec<DatasetItem>> {
    let text = fs::read_to_string(path)?;
    let origin = path.display().to_string();
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed)
            .map_err(|e| Error::Validation(format!("{origin}: {e}")));
    }
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: DatasetItem = serde_json::from_str(line)
            .map_err(|e| Error::Validation(format!("{origin}:{}: {e}", lineno + 1)))?;
        out.push(item);
    }
    Ok(out)
}

/// Seeded shuffle-and-split. The train side gets `round(fraction * n)`
/// items (clamped so both sides are non-empty); the same seed always
/// produces the same split.
pub fn split_dataset(
    items: &[DatasetItem],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<DatasetItem>, Vec<DatasetItem>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Validation(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    if items.len() < 2 {
        return Err(Error::EmptySplit);
    }
    let mut indices: Vec<usize> = (0..items.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let raw = (train_fraction * items.len() as f64).round() as usize;
    let train_n = raw.clamp(1, items.len() - 1);
    let (train_idx, test_idx) = indices.split_at(train_n);
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect();
    Ok((pick(train_idx), pick(test_idx)))
}

/// What kind of run the harness should score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// The base agent alone.
    Base,
    /// The knowledge-augmented agent over a knowledge store.
    Tk,
    /// The base agent primed with similarity-retrieved memory entries.
    Memory,
}

/// The stores a mode needs.
pub enum EvalResources<'a> {
    None,
    Tk(&'a TkStore),
    Memory(&'a MemoryStore),
}

/// Why an incorrect answer was wrong.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorClass {
    /// No final SQL was produced at all.
    NoSql,
    /// The final query fails to execute.
    Runtime,
    /// The query touches the wrong tables or columns.
    DataSelection,
    /// Right identifiers, wrong use of them (filters, aggregation, ...).
    DataUsage,
}

/// Classify one wrong answer. `final_sql` must be the produced query (may
/// be empty) and `final_result` its execution outcome.
pub fn classify_error(
    final_sql: &str,
    gold_sql: &str,
    final_result: &ExecResult,
    catalog: &SchemaCatalog,
) -> ErrorClass {
    if final_sql.trim().is_empty() {
        return ErrorClass::NoSql;
    }
    if matches!(final_result.outcome, Outcome::Failure(_)) {
        return ErrorClass::Runtime;
    }
    let empty = BTreeSet::new();
    let ours = extract_features_lossy(final_sql, catalog, &empty);
    let gold = extract_features_lossy(gold_sql, catalog, &empty);
    if ours.tables != gold.tables || ours.columns != gold.columns {
        ErrorClass::DataSelection
    } else {
        ErrorClass::DataUsage
    }
}

/// How one scored question ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeStatus {
    Final,
    ForcedFinal,
    Failed,
    /// The run aborted (transport failure, budget, ...).
    Error,
}

impl From<TraceStatus> for OutcomeStatus {
    fn from(s: TraceStatus) -> Self {
        match s {
            TraceStatus::Final => OutcomeStatus::Final,
            TraceStatus::ForcedFinal => OutcomeStatus::ForcedFinal,
            TraceStatus::Failed => OutcomeStatus::Failed,
        }
    }
}

/// Per-question scoring record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub question_id: String,
    pub status: OutcomeStatus,
    pub correct: bool,
    pub final_sql: String,
    pub llm_calls: u64,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_class: Option<ErrorClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retrieved_counts: Vec<usize>,
    #[serde(default)]
    pub feedback_rounds: usize,
}

/// Mean and population standard deviation.
fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// One repeat over the question set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_index: usize,
    pub outcomes: Vec<EvalOutcome>,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub calls_mean: f64,
    pub calls_std: f64,
    pub latency_ms_mean: f64,
    pub latency_ms_std: f64,
}

impl RunReport {
    fn from_outcomes(run_index: usize, outcomes: Vec<EvalOutcome>) -> Self {
        let total = outcomes.len();
        let correct = outcomes.iter().filter(|o| o.correct).count();
        let (calls_mean, calls_std) =
            mean_std(outcomes.iter().map(|o| o.llm_calls as f64));
        let (latency_ms_mean, latency_ms_std) =
            mean_std(outcomes.iter().map(|o| o.latency_ms as f64));
        RunReport {
            run_index,
            outcomes,
            correct,
            total,
            accuracy: if total == 0 {
                0.0
            } else {
                correct as f64 / total as f64
            },
            calls_mean,
            calls_std,
            latency_ms_mean,
            latency_ms_std,
        }
    }

    /// Correctness vector in question order.
    pub fn correctness(&self) -> Vec<bool> {
        self.outcomes.iter().map(|o| o.correct).collect()
    }
}

/// Full evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    pub seed: u64,
    pub prompt_version: String,
    pub generated_at: String,
    pub questions: usize,
    pub runs: Vec<RunReport>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub calls_mean: f64,
    pub calls_std: f64,
    pub latency_ms_mean: f64,
    pub latency_ms_std: f64,
}

impl EvalReport {
    /// Zero wall-clock-dependent fields so two runs of a deterministic
    /// backend can be compared byte-for-byte.
    pub fn normalize_volatile(&mut self) {
        self.generated_at.clear();
        self.latency_ms_mean = 0.0;
        self.latency_ms_std = 0.0;
        for run in &mut self.runs {
            run.latency_ms_mean = 0.0;
            run.latency_ms_std = 0.0;
            for outcome in &mut run.outcomes {
                outcome.latency_ms = 0;
            }
        }
    }

    /// Short flat metrics table for terminal output.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let mut row = |k: &str, v: String| {
            out.push_str(&format!("{k:<18} {v}\n"));
        };
        row("mode", self.mode.clone());
        row("questions", self.questions.to_string());
        row("runs", self.runs.len().to_string());
        row(
            "accuracy",
            format!(
                "{:.1}% ± {:.1}",
                self.accuracy_mean * 100.0,
                self.accuracy_std * 100.0
            ),
        );
        row(
            "llm calls / q",
            format!("{:.1} ± {:.1}", self.calls_mean, self.calls_std),
        );
        row(
            "latency / q",
            format!(
                "{:.1}s ± {:.1}",
                self.latency_ms_mean / 1000.0,
                self.latency_ms_std / 1000.0
            ),
        );
        out
    }
}

/// Evaluation controls.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub mode: EvalMode,
    /// Repeats over the question set.
    pub runs: usize,
    /// Retrieval budget for memory priming.
    pub top_k: usize,
    pub agent_limits: AgentLimits,
    /// Knowledge routing for [`EvalMode::Tk`].
    pub augment: AugmentOptions,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mode: EvalMode::Base,
            runs: 2,
            top_k: 5,
            agent_limits: AgentLimits::default(),
            augment: AugmentOptions::default(),
            seed: 0,
        }
    }
}

fn mode_label(mode: EvalMode, resources: &EvalResources) -> String {
    match (mode, resources) {
        (EvalMode::Base, _) => "base".to_string(),
        (EvalMode::Tk, _) => "tk".to_string(),
        (EvalMode::Memory, EvalResources::Memory(store)) => {
            format!("memory-{}", store.kind.as_str())
        }
        (EvalMode::Memory, _) => "memory".to_string(),
    }
}

/// Run and score one question against a forked gateway.
fn run_one(
    item: &DatasetItem,
    db: &DatabaseHandle,
    catalog: &SchemaCatalog,
    resources: &EvalResources,
    gateway: &Gateway,
    opts: &EvalOptions,
) -> EvalOutcome {
    let g = gateway.fork();
    let started = Instant::now();
    let run = match (opts.mode, resources) {
        (EvalMode::Base, _) => {
            run_agent_with_preamble(&item.question, None, db, catalog, &g, &opts.agent_limits)
                .map(|trace| (trace, Vec::new(), 0))
        }
        (EvalMode::Tk, EvalResources::Tk(store)) => run_augmented_agent(
            &item.question,
            db,
            catalog,
            store,
            &g,
            &opts.agent_limits,
            &opts.augment,
        )
        .map(|r| (r.trace, r.retrieved_counts, r.feedback_rounds)),
        (EvalMode::Memory, EvalResources::Memory(store)) => {
            memory_retrieve(store, &item.question, opts.top_k, &g).and_then(|entries| {
                let preamble = if entries.is_empty() {
                    None
                } else {
                    Some(memory_preamble(&entries))
                };
                let count = entries.len();
                run_agent_with_preamble(
                    &item.question,
                    preamble.as_deref(),
                    db,
                    catalog,
                    &g,
                    &opts.agent_limits,
                )
                .map(|trace| (trace, vec![count], 0))
            })
        }
        (EvalMode::Tk, _) => Err(Error::Validation(
            "tk mode needs a knowledge store".to_string(),
        )),
        (EvalMode::Memory, _) => Err(Error::Validation(
            "memory mode needs a memory store".to_string(),
        )),
    };
    let latency_ms = started.elapsed().as_millis() as u64;
    let llm_calls = g.call_count();

    match run {
        Ok((trace, retrieved_counts, feedback_rounds)) => {
            score_trace(item, trace, db, catalog, llm_calls, latency_ms)
                .with_retrieval(retrieved_counts, feedback_rounds)
        }
        Err(e) => EvalOutcome {
            question_id: item.question_id.clone(),
            status: OutcomeStatus::Error,
            correct: false,
            final_sql: String::new(),
            llm_calls,
            latency_ms,
            error_class: Some(ErrorClass::NoSql),
            error: Some(e.to_string()),
            retrieved_counts: Vec::new(),
            feedback_rounds: 0,
        },
    }
}

impl EvalOutcome {
    fn with_retrieval(mut self, retrieved_counts: Vec<usize>, feedback_rounds: usize) -> Self {
        self.retrieved_counts = retrieved_counts;
        self.feedback_rounds = feedback_rounds;
        self
    }
}

fn score_trace(
    item: &DatasetItem,
    trace: AgentTrace,
    db: &DatabaseHandle,
    catalog: &SchemaCatalog,
    llm_calls: u64,
    latency_ms: u64,
) -> EvalOutcome {
    let gold_result = exec_sql(&item.gold_sql, db);
    let (correct, error_class, final_sql) = match trace.final_sql() {
        Some(sql) => {
            let final_result = exec_sql(sql, db);
            let ok = equivalent(&final_result, &gold_result).equivalent;
            let class = (!ok).then(|| classify_error(sql, &item.gold_sql, &final_result, catalog));
            (ok, class, sql.to_string())
        }
        None => (false, Some(ErrorClass::NoSql), String::new()),
    };
    EvalOutcome {
        question_id: item.question_id.clone(),
        status: trace.status.into(),
        correct,
        final_sql,
        llm_calls,
        latency_ms,
        error_class,
        error: None,
        retrieved_counts: Vec::new(),
        feedback_rounds: 0,
    }
}

/// Evaluate a question set under one mode.
pub fn evaluate(
    items: &[DatasetItem],
    db: &DatabaseHandle,
    catalog: &SchemaCatalog,
    resources: &EvalResources,
    gateway: &Gateway,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::EmptyInput("evaluation question set"));
    }
    if opts.runs == 0 {
        return Err(Error::Validation("runs must be at least 1".to_string()));
    }
    let mut runs = Vec::with_capacity(opts.runs);
    for run_index in 0..opts.runs {
        let outcomes: Vec<EvalOutcome> = items
            .iter()
            .map(|item| run_one(item, db, catalog, resources, gateway, opts))
            .collect();
        runs.push(RunReport::from_outcomes(run_index, outcomes));
    }
    let (accuracy_mean, accuracy_std) = mean_std(runs.iter().map(|r| r.accuracy));
    let (calls_mean, calls_std) = mean_std(runs.iter().map(|r| r.calls_mean));
    let (latency_ms_mean, latency_ms_std) = mean_std(runs.iter().map(|r| r.latency_ms_mean));
    Ok(EvalReport {
        mode: mode_label(opts.mode, resources),
        seed: opts.seed,
        prompt_version: prompts::PROMPT_VERSION.to_string(),
        generated_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        questions: items.len(),
        runs,
        accuracy_mean,
        accuracy_std,
        calls_mean,
        calls_std,
        latency_ms_mean,
        latency_ms_std,
    })
}

/// Per-question robustness accounting between a base run and an augmented
/// run over the same questions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub total: usize,
    pub base_correct: usize,
    pub augmented_correct: usize,
    /// Questions the base agent missed and the augmented agent solved.
    pub fixed: usize,
    /// Questions the base agent solved and the augmented agent missed.
    pub broken: usize,
    pub fixed_rate: f64,
    pub broken_rate: f64,
    /// `fixed_rate - broken_rate`; identical (bit-for-bit) to the accuracy
    /// delta, because `fixed - broken == augmented_correct - base_correct`.
    pub net_gain: f64,
}

/// Compare correctness vectors question-by-question.
pub fn robustness(base: &[bool], augmented: &[bool]) -> Result<RobustnessReport> {
    if base.len() != augmented.len() {
        return Err(Error::MismatchedSets(format!(
            "base has {} outcomes, augmented has {}",
            base.len(),
            augmented.len()
        )));
    }
    if base.is_empty() {
        return Err(Error::EmptyInput("robustness comparison"));
    }
    let total = base.len();
    let mut fixed = 0usize;
    let mut broken = 0usize;
    let mut base_correct = 0usize;
    let mut augmented_correct = 0usize;
    for (&b, &a) in base.iter().zip(augmented) {
        base_correct += b as usize;
        augmented_correct += a as usize;
        fixed += (!b && a) as usize;
        broken += (b && !a) as usize;
    }
    debug_assert_eq!(
        fixed as i64 - broken as i64,
        augmented_correct as i64 - base_correct as i64
    );
    let net = (fixed as i64 - broken as i64) as f64 / total as f64;
    Ok(RobustnessReport {
        total,
        base_correct,
        augmented_correct,
        fixed,
        broken,
        fixed_rate: fixed as f64 / total as f64,
        broken_rate: broken as f64 / total as f64,
        net_gain: net,
    })
}

impl RobustnessReport {
    /// The accuracy delta, computed from the correct-counts. Equal to
    /// `net_gain` bit-for-bit.
    pub fn accuracy_delta(&self) -> f64 {
        (self.augmented_correct as i64 - self.base_correct as i64) as f64 / self.total as f64
    }

    /// One-decimal percent rendering, e.g. `16.9`.
    pub fn percent(value: f64) -> String {
        format!("{:.1}", value * 100.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{build_memory, MemoryKind};
    use crate::discovery::ExperienceTuple;
    use crate::gateway::scripted::ScriptedBackend;
    use crate::gateway::GatewayLimits;
    use std::sync::Arc;

    fn toy_db() -> DatabaseHandle {
        let db = DatabaseHandle::in_memory().unwrap();
        db.execute_batch(
            "CREATE TABLE purchase (name TEXT, brand TEXT, category TEXT, \
                                    pur_date DATE, price REAL);
             INSERT INTO purchase VALUES
               ('Nike Air Max', NULL, 'shoes', '2024-03-05', 120.0),
               ('Polo Shirt XL', NULL, 'apparel', '2024-05-11', 60.0),
               ('Adidas Gazelle', 'Adidas', 'shoes', '2024-07-21', 90.0);",
        )
        .unwrap();
        db
    }

    fn gw(backend: ScriptedBackend) -> Gateway {
        Gateway::new(Arc::new(backend), GatewayLimits::default())
    }

    fn items(n: usize) -> Vec<DatasetItem> {
        (0..n)
            .map(|i| DatasetItem {
                question_id: format!("q{i}"),
                question: format!("question {i}"),
                gold_sql: "SELECT COUNT(*) FROM purchase".to_string(),
            })
            .collect()
    }

    #[test]
    fn split_is_seeded_and_respects_the_fraction() {
        let data = items(135);
        let (train, test) = split_dataset(&data, 0.25, 7).unwrap();
        assert_eq!(train.len(), 34, "round(0.25 * 135)");
        assert_eq!(test.len(), 101);
        let (train2, test2) = split_dataset(&data, 0.25, 7).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        let (train3, _) = split_dataset(&data, 0.25, 8).unwrap();
        assert_ne!(train, train3, "different seed, different split");
        // No overlap, no loss.
        let ids: BTreeSet<&str> = train
            .iter()
            .chain(&test)
            .map(|i| i.question_id.as_str())
            .collect();
        assert_eq!(ids.len(), 135);
    }

    #[test]
    fn split_rejects_degenerate_inputs() {
        assert!(matches!(
            split_dataset(&items(1), 0.25, 0),
            Err(Error::EmptySplit)
        ));
        assert!(split_dataset(&items(10), 0.0, 0).is_err());
        assert!(split_dataset(&items(10), 1.0, 0).is_err());
        // Tiny sets still give both sides at least one item.
        let (train, test) = split_dataset(&items(2), 0.01, 0).unwrap();
        assert_eq!((train.len(), test.len()), (1, 1));
    }

    #[test]
    fn error_classification_covers_the_four_classes() {
        let db = toy_db();
        let catalog = db.catalog().unwrap();
        let gold = "SELECT COUNT(*) FROM purchase WHERE category = 'shoes'";

        assert_eq!(
            classify_error("", gold, &exec_sql("", &db), &catalog),
            ErrorClass::NoSql
        );
        let broken = "SELECT nope FROM purchase";
        assert_eq!(
            classify_error(broken, gold, &exec_sql(broken, &db), &catalog),
            ErrorClass::Runtime
        );
        let wrong_col = "SELECT COUNT(*) FROM purchase WHERE brand = 'shoes'";
        assert_eq!(
            classify_error(wrong_col, gold, &exec_sql(wrong_col, &db), &catalog),
            ErrorClass::DataSelection
        );
        let wrong_filter = "SELECT COUNT(*) FROM purchase WHERE category = 'apparel'";
        assert_eq!(
            classify_error(wrong_filter, gold, &exec_sql(wrong_filter, &db), &catalog),
            ErrorClass::DataUsage
        );
    }

    #[test]
    fn base_evaluation_scores_and_aggregates() {
        let backend = ScriptedBackend::new()
            .with_response(
                None,
                "question 0",
                "status: final\n```sql\nSELECT COUNT(*) FROM purchase\n```",
            )
            .with_response(
                None,
                "question 1",
                "status: final\n```sql\nSELECT COUNT(*) FROM purchase WHERE category = 'shoes'\n```",
            );
        let db = toy_db();
        let g = gw(backend);
        let report = evaluate(
            &items(2),
            &db,
            &db.catalog().unwrap(),
            &EvalResources::None,
            &g,
            &EvalOptions::default(),
        )
        .unwrap();
        assert_eq!(report.mode, "base");
        assert_eq!(report.runs.len(), 2);
        for run in &report.runs {
            assert_eq!(run.correct, 1);
            assert_eq!(run.total, 2);
            assert!(!run.outcomes[1].correct);
            // The wrong answer filters on a column the gold never touches.
            assert_eq!(run.outcomes[1].error_class, Some(ErrorClass::DataSelection));
            // Forked gateways meter exactly one call per question.
            assert_eq!(run.outcomes[0].llm_calls, 1);
        }
        assert_eq!(report.accuracy_mean, 0.5);
        assert_eq!(report.accuracy_std, 0.0);
        assert_eq!(report.calls_mean, 1.0);
    }

    #[test]
    fn tk_mode_requires_a_store_and_reports_feedback() {
        let db = toy_db();
        let g = gw(ScriptedBackend::new().with_response(
            None,
            "*",
            "status: final\n```sql\nSELECT COUNT(*) FROM purchase\n```",
        ));
        let opts = EvalOptions {
            mode: EvalMode::Tk,
            runs: 1,
            ..EvalOptions::default()
        };
        // Missing store: every question records an error outcome.
        let report = evaluate(
            &items(1),
            &db,
            &db.catalog().unwrap(),
            &EvalResources::None,
            &g,
            &opts,
        )
        .unwrap();
        assert_eq!(report.runs[0].outcomes[0].status, OutcomeStatus::Error);

        let store = TkStore::in_memory();
        let report = evaluate(
            &items(1),
            &db,
            &db.catalog().unwrap(),
            &EvalResources::Tk(&store),
            &g,
            &opts,
        )
        .unwrap();
        assert_eq!(report.mode, "tk");
        let outcome = &report.runs[0].outcomes[0];
        assert!(outcome.correct);
        assert_eq!(outcome.retrieved_counts, vec![0]);
        assert_eq!(outcome.feedback_rounds, 0);
    }

    #[test]
    fn memory_mode_primes_the_context() {
        let backend = ScriptedBackend::new()
            // Primed question answers right; unprimed default answers wrong.
            .with_response(
                None,
                "Notes from past work",
                "status: final\n```sql\nSELECT COUNT(*) FROM purchase\n```",
            )
            .with_response(
                None,
                "*",
                "status: final\n```sql\nSELECT COUNT(*) FROM purchase WHERE 0\n```",
            );
        let db = toy_db();
        let g = gw(backend);
        let tuples = vec![ExperienceTuple {
            question_id: "past".into(),
            question: "question 0".into(),
            gold_sql: "SELECT COUNT(*) FROM purchase".into(),
            agent_sql: "SELECT 0".into(),
            trace: None,
        }];
        let memory = build_memory(MemoryKind::Pairs, &tuples);
        let opts = EvalOptions {
            mode: EvalMode::Memory,
            runs: 1,
            ..EvalOptions::default()
        };
        let report = evaluate(
            &items(1),
            &db,
            &db.catalog().unwrap(),
            &EvalResources::Memory(&memory),
            &g,
            &opts,
        )
        .unwrap();
        assert_eq!(report.mode, "memory-pairs");
        let outcome = &report.runs[0].outcomes[0];
        assert!(outcome.correct, "preamble steered the answer");
        assert_eq!(outcome.retrieved_counts, vec![1]);
    }

    #[test]
    fn reports_normalize_to_byte_equality() {
        let backend = || {
            ScriptedBackend::new().with_response(
                None,
                "*",
                "status: final\n```sql\nSELECT COUNT(*) FROM purchase\n```",
            )
        };
        let db = toy_db();
        let catalog = db.catalog().unwrap();
        let run = |g: &Gateway| {
            let mut r = evaluate(
                &items(3),
                &db,
                &catalog,
                &EvalResources::None,
                g,
                &EvalOptions::default(),
            )
            .unwrap();
            r.normalize_volatile();
            serde_json::to_string_pretty(&r).unwrap()
        };
        let a = run(&gw(backend()));
        let b = run(&gw(backend()));
        assert_eq!(a, b);
    }

    #[test]
    fn robustness_identity_holds() {
        let base = [true, false, false, true, false];
        let augmented = [true, true, false, false, true];
        let r = robustness(&base, &augmented).unwrap();
        assert_eq!(r.fixed, 2);
        assert_eq!(r.broken, 1);
        assert_eq!(r.base_correct, 2);
        assert_eq!(r.augmented_correct, 3);
        assert_eq!(
            r.fixed as i64 - r.broken as i64,
            r.augmented_correct as i64 - r.base_correct as i64
        );
        assert_eq!(r.net_gain.to_bits(), r.accuracy_delta().to_bits());
    }

    #[test]
    fn robustness_percent_rendering() {
        // 181 fixed, 12 broken out of 1000 questions.
        let mut base = vec![true; 1000];
        let mut augmented = vec![true; 1000];
        for slot in base.iter_mut().take(181) {
            *slot = false;
        }
        for slot in augmented.iter_mut().skip(988) {
            *slot = false;
        }
        let r = robustness(&base, &augmented).unwrap();
        assert_eq!(r.fixed, 181);
        assert_eq!(r.broken, 12);
        assert_eq!(RobustnessReport::percent(r.fixed_rate), "18.1");
        assert_eq!(RobustnessReport::percent(r.broken_rate), "1.2");
        assert_eq!(RobustnessReport::percent(r.net_gain), "16.9");
    }

    #[test]
    fn robustness_rejects_mismatched_lengths() {
        assert!(matches!(
            robustness(&[true], &[true, false]),
            Err(Error::MismatchedSets(_))
        ));
        assert!(robustness(&[], &[]).is_err());
    }

    #[test]
    fn dataset_loading_accepts_arrays_and_lines() {
        let dir = tempfile::tempdir().unwrap();
        let array = dir.path().join("d.json");
        std::fs::write(
            &array,
            r#"[{"question_id": "1", "question": "q", "gold_sql": "SELECT 1"}]"#,
        )
        .unwrap();
        assert_eq!(load_dataset(&array).unwrap().len(), 1);

        let lines = dir.path().join("d.jsonl");
        std::fs::write(
            &lines,
            "{\"question_id\": \"1\", \"question\": \"q\", \"gold_sql\": \"SELECT 1\"}\n\
             {\"question_id\": \"2\", \"question\": \"r\", \"gold_sql\": \"SELECT 2\"}\n",
        )
        .unwrap();
        assert_eq!(load_dataset(&lines).unwrap().len(), 2);

        let bad = dir.path().join("bad.jsonl");
        std::fs::write(&bad, "not json\n").unwrap();
        let err = load_dataset(&bad).unwrap_err();
        assert!(err.to_string().contains("bad.jsonl:1"), "{err}");
    }
}
