//! Prompt templates for every LLM call site, versioned as a unit.
//!
//! Builders return full prompt strings; call sites own message assembly.
//! Keeping all wording here makes scripted tests stable and lets prompt
//! changes be reviewed in one place.

/// Bumped whenever any template changes; echoed into reports.
pub const PROMPT_VERSION: &str = "1";

/// System prompt for the base answer agent.
pub fn base_agent_system(schema: &str) -> String {
    format!(
        "You are a careful SQL analyst working against a SQLite database.\n\
         Schema:\n{schema}\n\
         Answer the user's question by writing SQL. You may first run \
         exploratory queries to inspect the data.\n\
         Reply every turn with a status line, then exactly one fenced SQL \
         block containing a single statement:\n\
         status: explore   (run the query and show me the result)\n\
         status: final     (this query is my answer)\n\
         ```sql\nSELECT ...\n```"
    )
}

/// System prompt for the feedback-augmented agent: same wire format, plus
/// an instruction to structure drafts as CTE chains and accept feedback.
pub fn augmented_agent_system(schema: &str) -> String {
    format!(
        "{}\n\
         Structure any non-trivial query as a WITH chain of simple CTEs, one \
         logical step per CTE.\n\
         You may receive corrective feedback about a specific part of your \
         draft. When you do, revise the full query accordingly and reply \
         with status: final and the revised query.",
        base_agent_system(schema)
    )
}

/// Note appended to the conversation when a reply could not be parsed.
pub const AGENT_FORMAT_REMINDER: &str =
    "I could not use that reply. Follow the format exactly: a line \
     `status: explore` or `status: final`, then one fenced ```sql block \
     with a single statement.";

/// System prompt for proposing one corrective edit.
pub fn make_correction_system(schema: &str) -> String {
    format!(
        "You repair SQL queries against a SQLite database.\n\
         Schema:\n{schema}\n\
         You are given a question, a draft query whose execution result is \
         wrong, and the result the correct answer must produce. Propose the \
         smallest fix.\n\
         Reply with a JSON object, either\n\
         {{\"sql\": \"<the full corrected query, changing exactly ONE clause \
         of the draft>\", \"delta\": \"<one sentence: what you changed and \
         why>\"}}\n\
         or, to inspect the data first,\n\
         {{\"explore\": \"<a SELECT statement>\"}}"
    )
}

/// User prompt for one correction iteration.
pub fn make_correction_user(
    question: &str,
    draft_sql: &str,
    draft_result: &str,
    expected_result: &str,
    prior_deltas: &[String],
) -> String {
    let mut out = format!(
        "Question: {question}\n\nCurrent draft:\n```sql\n{draft_sql}\n```\n\n\
         Draft result (wrong):\n{draft_result}\n\n\
         Expected result:\n{expected_result}\n"
    );
    if !prior_deltas.is_empty() {
        out.push_str("\nEdits already applied:\n");
        for (i, d) in prior_deltas.iter().enumerate() {
            out.push_str(&format!("{}. {d}\n", i + 1));
        }
    }
    out.push_str("\nPropose the next single-clause fix (or explore).");
    out
}

/// Follow-up when a proposed edit touched more than one clause.
pub fn atomicity_re_ask(changed: &str) -> String {
    format!(
        "That edit changed multiple clauses ({changed}). Propose the fix \
         again as a JSON object, changing exactly one clause of the draft."
    )
}

/// Follow-up carrying an exploration result back to the model.
pub fn exploration_result(result: &str) -> String {
    format!("Exploration result:\n{result}\n\nNow propose the fix as JSON.")
}

/// System prompt for the self-reflection pass over accepted edits.
pub const REQUIRED_CORRECTIONS_SYSTEM: &str =
    "You review a sequence of edits that repaired a SQL query. Keep only \
     the edits that encode reusable insight about this database — data \
     quirks, column semantics, join requirements. Drop incidental rewrites \
     such as renames, formatting, or stylistic changes. Reply with a JSON \
     object {\"kept\": [<indices of edits to keep>]}.";

/// User prompt for the self-reflection pass.
pub fn required_corrections_user(
    question: &str,
    original_sql: &str,
    final_sql: &str,
    deltas: &[String],
) -> String {
    let mut out = format!(
        "Question: {question}\n\nOriginal draft:\n```sql\n{original_sql}\n```\n\n\
         Fully repaired query:\n```sql\n{final_sql}\n```\n\nEdits applied:\n"
    );
    for (i, d) in deltas.iter().enumerate() {
        out.push_str(&format!("{i}. {d}\n"));
    }
    out.push_str("\nWhich edits should be kept?");
    out
}

/// System prompt for turning one edit into a knowledge row.
pub fn gen_tk_row_system(keyword_vocabulary: &str, type_taxonomy: &str) -> String {
    format!(
        "You distill a corrective SQL edit into one reusable knowledge \
         statement plus a structured applicability condition.\n\
         The statement must be general: describe the underlying data quirk \
         or rule, not this particular question.\n\
         The condition says when the statement applies, over four feature \
         dimensions; each is either \"*\" (always applies) or a list of \
         values that must overlap the query's features.\n\
         Allowed sql_keywords values: {keyword_vocabulary}.\n\
         Allowed data_types values: {type_taxonomy}.\n\
         tables and columns take schema names.\n\
         Reply with a JSON object:\n\
         {{\"knowledge\": \"...\", \"condition\": {{\"sql_keywords\": [...] or \
         \"*\", \"tables\": ..., \"columns\": ..., \"data_types\": ...}}}}"
    )
}

/// User prompt for knowledge-row generation.
pub fn gen_tk_row_user(
    question: &str,
    delta: &str,
    sql_before: &str,
    sql_after: &str,
    schema: &str,
) -> String {
    format!(
        "Question: {question}\n\nEdit: {delta}\n\n\
         Before:\n```sql\n{sql_before}\n```\n\nAfter:\n```sql\n{sql_after}\n```\n\n\
         Schema:\n{schema}\n\
         Produce the knowledge statement and its applicability condition."
    )
}

/// System prompt for pruning condition-matched statements.
pub const FILTER_KNOWLEDGE_SYSTEM: &str =
    "You are given a SQL query (or query fragment) and a numbered list of \
     knowledge statements whose structural conditions matched it. Keep only \
     the statements that plausibly apply to what this query is doing. Reply \
     with a JSON object {\"kept\": [<indices>]}.";

/// User prompt for the filter call.
pub fn filter_knowledge_user(sql: &str, question: Option<&str>, statements: &[String]) -> String {
    let mut out = String::new();
    if let Some(q) = question {
        out.push_str(&format!("Question: {q}\n\n"));
    }
    out.push_str(&format!("Query under consideration:\n```sql\n{sql}\n```\n\nStatements:\n"));
    for (i, s) in statements.iter().enumerate() {
        out.push_str(&format!("{i}. {s}\n"));
    }
    out.push_str("\nWhich statements apply?");
    out
}

/// System prompt for summarizing knowledge into per-CTE feedback.
pub const FEEDBACK_SYSTEM: &str =
    "You turn knowledge statements into one short piece of corrective \
     feedback about a specific part of a SQL draft. Be concrete and \
     actionable; mention the exact columns or constructs to change. Reply \
     with the feedback text only.";

/// User prompt for the feedback call.
pub fn feedback_user(
    question: &str,
    segment_name: Option<&str>,
    segment_sql: &str,
    statements: &[String],
) -> String {
    let target = match segment_name {
        Some(n) => format!("CTE `{n}`"),
        None => "the final SELECT".to_string(),
    };
    let mut out = format!(
        "Question: {question}\n\nDraft part under review ({target}):\n\
         ```sql\n{segment_sql}\n```\n\nApplicable knowledge:\n"
    );
    for s in statements {
        out.push_str(&format!("- {s}\n"));
    }
    out.push_str("\nWrite the feedback for this part.");
    out
}

/// System prompt for the naive one-shot lesson baseline.
pub const NAIVE_KNOWLEDGE_SYSTEM: &str =
    "You are shown a question, a wrong SQL query, and the correct SQL \
     query. State in one or two sentences the reusable lesson that would \
     have prevented the mistake. Reply with a JSON object \
     {\"statement\": \"...\"}.";

/// User prompt for the naive lesson baseline.
pub fn naive_knowledge_user(question: &str, wrong_sql: &str, gold_sql: &str) -> String {
    format!(
        "Question: {question}\n\nWrong query:\n```sql\n{wrong_sql}\n```\n\n\
         Correct query:\n```sql\n{gold_sql}\n```\n\nWhat is the lesson?"
    )
}

/// Rendering of knowledge statements injected into an agent's initial
/// context (initial-injection mode and memory-style baselines).
pub fn knowledge_preamble(statements: &[String]) -> String {
    let mut out = String::from("Notes from past work on this database:\n");
    for s in statements {
        out.push_str(&format!("- {s}\n"));
    }
    out
}
