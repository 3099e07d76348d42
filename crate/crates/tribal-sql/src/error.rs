//! Unified error type for the whole crate.
//!
//! Every fallible operation returns [`Result`]. Variants are grouped by the
//! subsystem that raises them; the CLI maps them onto exit codes (`1` for
//! user/configuration mistakes, `2` for runtime failures).

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Network or provider failure that survived the retry budget.
    #[error("llm transport failure: {0}")]
    Transport(String),

    /// Model output did not satisfy the requested response schema after the
    /// retry budget was spent.
    #[error("malformed model output: {0}")]
    MalformedOutput(String),

    /// A configured call or token budget was exceeded.
    #[error("llm budget exceeded: {0}")]
    BudgetExceeded(String),

    /// An input that must be non-empty was empty.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// SQL text failed to parse under the supported dialect.
    #[error("sql parse error: {0}")]
    Parse(String),

    /// A statement references a relation absent from the schema catalog.
    #[error("unknown relation: {0}")]
    UnknownRelation(String),

    /// Database file could not be opened or the connection is unusable.
    #[error("database connection: {0}")]
    Connection(String),

    /// A record failed structural validation (vocabulary, shape, ranges).
    #[error("validation: {0}")]
    Validation(String),

    /// A configuration key is missing, malformed, or out of range.
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    /// The correction loop exhausted its iteration budget without repairing
    /// the query.
    #[error("correction loop gave up after {0} iterations")]
    GaveUp(usize),

    /// The agent produced no parsable SQL after retries.
    #[error("agent emitted no parsable sql")]
    NoSqlEmitted,

    /// Two outcome sets passed to a comparison do not cover the same
    /// question ids.
    #[error("outcome sets do not cover the same questions: {0}")]
    MismatchedSets(String),

    /// A dataset split left the test side empty.
    #[error("dataset split produced an empty test side")]
    EmptySplit,

    /// Underlying I/O failure.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Validation(format!("json: {e}"))
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code the CLI should terminate with for this error.
    ///
    /// `1` marks user errors (bad config, bad input files, validation),
    /// `2` marks runtime failures (transport, database, budget).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::EmptyInput(_)
            | Error::Parse(_)
            | Error::UnknownRelation(_)
            | Error::Validation(_)
            | Error::Config { .. }
            | Error::MismatchedSets(_)
            | Error::EmptySplit => 1,
            _ => 2,
        }
    }
}
