//! Command-line front end: inspect SQL features, run queries, manage the
//! knowledge store, build baselines, populate knowledge from experience,
//! answer questions, and evaluate agents.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tribal_sql::agent::{
    run_agent_with_preamble, run_augmented_agent, InjectionPoint, KnowledgeScope, RetrievalSource,
};
use tribal_sql::baselines::{
    build_memory, build_naive_knowledge, memory_preamble, memory_retrieve, MemoryKind, MemoryStore,
};
use tribal_sql::config::{self, RunConfig};
use tribal_sql::discovery::{load_experience, populate};
use tribal_sql::error::{Error, Result};
use tribal_sql::eval::{
    evaluate, load_dataset, robustness, split_dataset, EvalMode, EvalOptions, EvalReport,
    EvalResources, RobustnessReport,
};
use tribal_sql::exec::{exec_sql, DatabaseHandle};
use tribal_sql::sql::features::extract_features_lossy;
use tribal_sql::store::TkStore;

#[derive(Parser)]
#[command(
    name = "tribal-sql",
    about = "Knowledge-augmented SQL agents over SQLite",
    version
)]
struct Cli {
    /// Configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Verbose logging.
    #[arg(long, short, global = true)]
    verbose: bool,

    /// Random seed (overrides the configured seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract the four feature dimensions of a query.
    Features {
        /// The SQL text.
        sql: String,
        /// SQLite database for schema-aware extraction.
        #[arg(long)]
        db: Option<PathBuf>,
    },
    /// Execute a query read-only and print a result preview.
    Exec {
        sql: String,
        #[arg(long)]
        db: PathBuf,
        /// Maximum rows to print.
        #[arg(long, default_value_t = 20)]
        rows: usize,
    },
    /// Knowledge-store maintenance.
    Store {
        #[command(subcommand)]
        command: StoreCommand,
    },
    /// Build a memory baseline store from experience tuples.
    BuildMemory {
        #[arg(long, value_enum)]
        kind: MemoryKindArg,
        /// Experience tuples (JSON array or JSON lines).
        #[arg(long)]
        experience: PathBuf,
        #[arg(long)]
        db: PathBuf,
        /// Output file for the memory store.
        #[arg(long)]
        out: PathBuf,
    },
    /// Discover knowledge from experience tuples into a store.
    Populate {
        #[arg(long)]
        experience: PathBuf,
        #[arg(long)]
        db: PathBuf,
        /// Knowledge-store file (created if missing).
        #[arg(long)]
        store: PathBuf,
        /// Store correction deltas verbatim instead of generalizing.
        #[arg(long)]
        no_generalize: bool,
        /// Accept multi-clause edits without a re-ask.
        #[arg(long)]
        no_atomicity: bool,
    },
    /// Answer one question with an agent.
    Answer {
        question: String,
        #[arg(long)]
        db: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Base)]
        mode: ModeArg,
        /// Knowledge store (tk mode).
        #[arg(long)]
        store: Option<PathBuf>,
        /// Memory store (memory mode).
        #[arg(long)]
        memory: Option<PathBuf>,
    },
    /// Evaluate an agent over a dataset and write a JSON report.
    Evaluate {
        /// Dataset (JSON array or JSON lines of question/gold records).
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        db: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Base)]
        mode: ModeArg,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        memory: Option<PathBuf>,
        /// Report output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Evaluate only the held-out side of a seeded split.
        #[arg(long)]
        split: bool,
        /// Repeat runs (overrides the configured value).
        #[arg(long)]
        runs: Option<usize>,
        /// Knowledge scope for tk mode.
        #[arg(long, value_enum, default_value_t = ScopeArg::Scoped)]
        scope: ScopeArg,
        /// Retrieval source for tk mode.
        #[arg(long, value_enum, default_value_t = SourceArg::Cte)]
        source: SourceArg,
        /// Injection point for tk mode.
        #[arg(long, value_enum, default_value_t = InjectionArg::Cte)]
        injection: InjectionArg,
    },
    /// Compare two evaluation reports question-by-question.
    Compare {
        /// Base-agent report.
        base: PathBuf,
        /// Augmented-agent report.
        augmented: PathBuf,
    },
}

#[derive(Subcommand)]
enum StoreCommand {
    /// List all rows.
    List {
        #[arg(long)]
        store: PathBuf,
    },
    /// Show one row in full.
    Show {
        id: u64,
        #[arg(long)]
        store: PathBuf,
    },
    /// Print the rows whose conditions match a query (no LLM filtering).
    Match {
        sql: String,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        db: PathBuf,
    },
    /// Drop exact duplicate rows and rewrite the file.
    Compact {
        #[arg(long)]
        store: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MemoryKindArg {
    Trace,
    Pairs,
    Naive,
}

impl From<MemoryKindArg> for MemoryKind {
    fn from(a: MemoryKindArg) -> Self {
        match a {
            MemoryKindArg::Trace => MemoryKind::Trace,
            MemoryKindArg::Pairs => MemoryKind::Pairs,
            MemoryKindArg::Naive => MemoryKind::Naive,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ModeArg {
    Base,
    Tk,
    Memory,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Zero,
    All,
    Scoped,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Question,
    WholeSql,
    Cte,
}

#[derive(Clone, Copy, ValueEnum)]
enum InjectionArg {
    Initial,
    WholeSql,
    Cte,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(
        if cli.verbose { "debug" } else { "warn" },
    ))
    .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn open_db(path: &Path, config: &RunConfig) -> Result<DatabaseHandle> {
    Ok(DatabaseHandle::open_read_only(path)?.with_timeout(config.exec_timeout()))
}

fn run(cli: Cli) -> Result<()> {
    let mut config = config::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }

    match cli.command {
        Command::Features { sql, db } => {
            let catalog = match db {
                Some(path) => open_db(&path, &config)?.catalog()?,
                None => Default::default(),
            };
            let features = extract_features_lossy(&sql, &catalog, &BTreeSet::new());
            println!("{}", serde_json::to_string_pretty(&features)?);
        }
        Command::Exec { sql, db, rows } => {
            let handle = open_db(&db, &config)?;
            let result = exec_sql(&sql, &handle);
            println!("{}", result.preview(rows));
        }
        Command::Store { command } => run_store(command, &config)?,
        Command::BuildMemory {
            kind,
            experience,
            db,
            out,
        } => {
            let tuples = load_experience(&experience)?;
            let kind = MemoryKind::from(kind);
            let store = match kind {
                MemoryKind::Trace | MemoryKind::Pairs => build_memory(kind, &tuples),
                MemoryKind::Naive => {
                    let handle = open_db(&db, &config)?;
                    let gateway = config.build_gateway()?;
                    build_naive_knowledge(&tuples, &handle, &gateway)?
                }
            };
            store.save(&out)?;
            println!(
                "built {} memory with {} entries -> {}",
                kind.as_str(),
                store.len(),
                out.display()
            );
        }
        Command::Populate {
            experience,
            db,
            store,
            no_generalize,
            no_atomicity,
        } => {
            let tuples = load_experience(&experience)?;
            let handle = open_db(&db, &config)?;
            let catalog = handle.catalog()?;
            let gateway = config.build_gateway()?;
            let mut limits = config.discovery_limits();
            limits.generalize = limits.generalize && !no_generalize;
            limits.enforce_atomicity = limits.enforce_atomicity && !no_atomicity;
            let mut tk = TkStore::open(&store)?;
            let report = populate(&tuples, &handle, &catalog, &mut tk, &gateway, &limits)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Answer {
            question,
            db,
            mode,
            store,
            memory,
        } => {
            let handle = open_db(&db, &config)?;
            let catalog = handle.catalog()?;
            let gateway = config.build_gateway()?;
            let limits = config.agent_limits();
            let trace = match mode {
                ModeArg::Base => {
                    run_agent_with_preamble(&question, None, &handle, &catalog, &gateway, &limits)?
                }
                ModeArg::Tk => {
                    let store_path = store.ok_or(Error::Config {
                        key: "store".to_string(),
                        message: "tk mode needs --store".to_string(),
                    })?;
                    let tk = TkStore::open(&store_path)?;
                    let opts = config.augment_options(
                        KnowledgeScope::Scoped,
                        RetrievalSource::Cte,
                        InjectionPoint::Cte,
                    );
                    run_augmented_agent(
                        &question, &handle, &catalog, &tk, &gateway, &limits, &opts,
                    )?
                    .trace
                }
                ModeArg::Memory => {
                    let memory_path = memory.ok_or(Error::Config {
                        key: "memory".to_string(),
                        message: "memory mode needs --memory".to_string(),
                    })?;
                    let mem = MemoryStore::open(&memory_path)?;
                    let entries = memory_retrieve(&mem, &question, config.top_k, &gateway)?;
                    let preamble =
                        (!entries.is_empty()).then(|| memory_preamble(&entries));
                    run_agent_with_preamble(
                        &question,
                        preamble.as_deref(),
                        &handle,
                        &catalog,
                        &gateway,
                        &limits,
                    )?
                }
            };
            match trace.final_sql() {
                Some(sql) => {
                    println!("{sql}\n");
                    println!("{}", exec_sql(sql, &handle).preview(config.preview_rows));
                }
                None => return Err(Error::NoSqlEmitted),
            }
        }
        Command::Evaluate {
            dataset,
            db,
            mode,
            store,
            memory,
            out,
            split,
            runs,
            scope,
            source,
            injection,
        } => {
            let mut items = load_dataset(&dataset)?;
            if split {
                let (_, test) = split_dataset(&items, config.train_fraction, config.seed)?;
                items = test;
            }
            let handle = open_db(&db, &config)?;
            let catalog = handle.catalog()?;
            let gateway = config.build_gateway()?;

            let tk_store;
            let memory_store;
            let (eval_mode, resources) = match mode {
                ModeArg::Base => (EvalMode::Base, EvalResources::None),
                ModeArg::Tk => {
                    let path = store.ok_or(Error::Config {
                        key: "store".to_string(),
                        message: "tk mode needs --store".to_string(),
                    })?;
                    tk_store = TkStore::open(&path)?;
                    (EvalMode::Tk, EvalResources::Tk(&tk_store))
                }
                ModeArg::Memory => {
                    let path = memory.ok_or(Error::Config {
                        key: "memory".to_string(),
                        message: "memory mode needs --memory".to_string(),
                    })?;
                    memory_store = MemoryStore::open(&path)?;
                    (EvalMode::Memory, EvalResources::Memory(&memory_store))
                }
            };
            let scope = match scope {
                ScopeArg::Zero => KnowledgeScope::Zero,
                ScopeArg::All => KnowledgeScope::All,
                ScopeArg::Scoped => KnowledgeScope::Scoped,
            };
            let source = match source {
                SourceArg::Question => RetrievalSource::Question,
                SourceArg::WholeSql => RetrievalSource::WholeSql,
                SourceArg::Cte => RetrievalSource::Cte,
            };
            let injection = match injection {
                InjectionArg::Initial => InjectionPoint::Initial,
                InjectionArg::WholeSql => InjectionPoint::WholeSql,
                InjectionArg::Cte => InjectionPoint::Cte,
            };
            let opts = EvalOptions {
                mode: eval_mode,
                runs: runs.unwrap_or(config.runs),
                top_k: config.top_k,
                agent_limits: config.agent_limits(),
                augment: config.augment_options(scope, source, injection),
                seed: config.seed,
            };
            let report = evaluate(&items, &handle, &catalog, &resources, &gateway, &opts)?;
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(path) => {
                    std::fs::write(&path, &json)?;
                    eprintln!("report -> {}", path.display());
                }
                None => println!("{json}"),
            }
            eprint!("{}", report.render_table());
        }
        Command::Compare { base, augmented } => {
            let base: EvalReport = read_report(&base)?;
            let augmented: EvalReport = read_report(&augmented)?;
            let report = compare_reports(&base, &augmented)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            eprintln!(
                "fixed {}% / broke {}% -> net {:+}%",
                RobustnessReport::percent(report.fixed_rate),
                RobustnessReport::percent(report.broken_rate),
                report.net_gain * 100.0
            );
        }
    }
    Ok(())
}

fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

/// Align two reports by question id (first run each) and compare.
fn compare_reports(base: &EvalReport, augmented: &EvalReport) -> Result<RobustnessReport> {
    let first = |r: &EvalReport| -> Result<Vec<(String, bool)>> {
        r.runs
            .first()
            .map(|run| {
                run.outcomes
                    .iter()
                    .map(|o| (o.question_id.clone(), o.correct))
                    .collect()
            })
            .ok_or_else(|| Error::Validation("report has no runs".to_string()))
    };
    let base_outcomes = first(base)?;
    let augmented_outcomes = first(augmented)?;
    let base_ids: Vec<&str> = base_outcomes.iter().map(|(id, _)| id.as_str()).collect();
    let augmented_ids: Vec<&str> = augmented_outcomes
        .iter()
        .map(|(id, _)| id.as_str())
        .collect();
    if base_ids != augmented_ids {
        return Err(Error::MismatchedSets(
            "reports cover different question sets".to_string(),
        ));
    }
    let base_flags: Vec<bool> = base_outcomes.iter().map(|(_, c)| *c).collect();
    let augmented_flags: Vec<bool> = augmented_outcomes.iter().map(|(_, c)| *c).collect();
    robustness(&base_flags, &augmented_flags)
}

fn run_store(command: StoreCommand, config: &RunConfig) -> Result<()> {
    match command {
        StoreCommand::List { store } => {
            let tk = TkStore::open(&store)?;
            for row in tk.rows() {
                println!("{:>4}  {}  {}", row.id, row.condition.summary(), row.knowledge);
            }
            eprintln!("{} rows", tk.len());
        }
        StoreCommand::Show { id, store } => {
            let tk = TkStore::open(&store)?;
            let row = tk
                .rows()
                .iter()
                .find(|r| r.id == id)
                .ok_or_else(|| Error::Validation(format!("no row with id {id}")))?;
            println!("{}", serde_json::to_string_pretty(row)?);
        }
        StoreCommand::Match { sql, store, db } => {
            let tk = TkStore::open(&store)?;
            let handle = open_db(&db, config)?;
            let catalog = handle.catalog()?;
            let features = extract_features_lossy(&sql, &catalog, &BTreeSet::new());
            for row in tk.candidates(&features) {
                println!("{:>4}  {}", row.id, row.knowledge);
            }
        }
        StoreCommand::Compact { store } => {
            let mut tk = TkStore::open(&store)?;
            let before = tk.len();
            tk.compact()?;
            println!("{} -> {} rows", before, tk.len());
        }
    }
    Ok(())
}
