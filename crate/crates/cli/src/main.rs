use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use taxorag_core::evaluation::MetricsReport;
use taxorag_core::harness::{self, HarnessError, RunConfig};

mod overrides;

/// Zero-shot hierarchical text classification over a label taxonomy.
#[derive(Debug, Parser)]
#[command(name = "taxorag", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse the dataset and taxonomy and print a summary.
    IngestCheck(ConfigArgs),
    /// Embed every label (through the cache) and print index statistics.
    BuildIndex(ConfigArgs),
    /// Run the full pipeline and write reports to the output directory.
    Classify(ConfigArgs),
    /// Re-score an existing run report.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        report: PathBuf,
        /// Write the metrics JSON here as well as printing the table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two metrics.json files (B relative to A).
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Dump retrieved candidates, subgraph edges, and paths for one document.
    RetrieveDebug {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long = "doc")]
        document_id: String,
    },
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON run config. Flags below override its fields.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// kg-htc, full-kg, or weak-baseline.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    sample_size: Option<usize>,
    #[arg(long)]
    sample_seed: Option<u64>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// mock-hash or http.
    #[arg(long)]
    embedding_provider: Option<String>,
    /// http, mock-echo, mock-scripted, or mock-constant.
    #[arg(long)]
    chat_provider: Option<String>,
    #[arg(long)]
    task_description: Option<String>,
    /// Top-k for one level, as LEVEL=K. Repeatable.
    #[arg(long = "k", value_name = "LEVEL=K")]
    k: Vec<String>,
    /// Any config field, as dotted.path=value (JSON or plain string). Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Harness(HarnessError),
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        Self::Harness(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Harness(e) => e.exit_code() as u8,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) => f.write_str(m),
            Self::Harness(e) => e.fmt(f),
        }
    }
}

const INTERRUPTED: u8 = 130;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(command: Command) -> Result<u8, CliError> {
    match command {
        Command::IngestCheck(args) => {
            let p = harness::prepare(&load_config(&args)?)?;
            let t = &p.taxonomy;
            println!("dataset {}: {} documents, {} sampled", p.dataset_name, p.total_documents, p.documents.len());
            for level in 1..=t.depth() {
                let n = t.labels_at_level(level).map_err(HarnessError::from)?.len();
                println!("level {level}: {n} labels");
            }
            for d in p.documents.iter().take(5) {
                println!("  {}  {}", d.id, d.gold.as_ref().map(|g| g.join(" -> ")).unwrap_or_default());
            }
            Ok(0)
        }
        Command::BuildIndex(args) => {
            let p = harness::prepare(&load_config(&args)?)?;
            let embedder = harness::build_embedding_provider(&p.config.embedding)?;
            let cache = harness::open_cache(&p.config.embedding)?;
            let (_, summary) = harness::build_index(&p, embedder.as_ref(), &cache)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            Ok(0)
        }
        Command::Classify(args) => {
            let config = load_config(&args)?;
            let cancel = Arc::new(AtomicBool::new(false));
            let flag = Arc::clone(&cancel);
            if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)) {
                log::warn!("cannot install interrupt handler: {e}");
            }
            let summary = harness::run(&config, Some(&cancel))?;
            print!("{}", harness::format_metrics(&summary.metrics));
            println!("reports written to {}", config.output_dir.display());
            if summary.interrupted {
                eprintln!(
                    "interrupted after {} of {} documents; partial reports written",
                    summary.records.len(),
                    summary.documents_sampled
                );
                return Ok(INTERRUPTED);
            }
            Ok(0)
        }
        Command::Evaluate { config, report, out } => {
            let metrics = harness::evaluate_report(&load_config(&config)?, &report)?;
            print!("{}", harness::format_metrics(&metrics));
            if let Some(out) = out {
                let text = serde_json::to_string_pretty(&metrics).expect("metrics serialize") + "\n";
                std::fs::write(&out, text).map_err(HarnessError::from)?;
            }
            Ok(0)
        }
        Command::Compare { a, b, json } => {
            let cmp = harness::compare(&read_metrics(&a)?, &read_metrics(&b)?)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&cmp).expect("comparison serializes"));
            } else {
                print!("{cmp}");
            }
            Ok(0)
        }
        Command::RetrieveDebug { config, document_id } => {
            let mut config = load_config(&config)?;
            config.sample.size = None;
            let p = harness::prepare(&config)?;
            let embedder = harness::build_embedding_provider(&p.config.embedding)?;
            let cache = harness::open_cache(&p.config.embedding)?;
            print!("{}", harness::debug_document(&p, embedder.as_ref(), &cache, &document_id)?);
            Ok(0)
        }
    }
}

fn read_metrics(path: &Path) -> Result<MetricsReport, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, CliError> {
    let mut root: Value = match &args.config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => Value::Object(Default::default()),
    };
    let mut sets: Vec<(Vec<String>, Value)> = Vec::new();
    let mut put = |path: &str, v: Value| sets.push((path.split('.').map(str::to_owned).collect(), v));
    let path_value = |p: &PathBuf| Value::String(p.to_string_lossy().into_owned());
    if let Some(p) = &args.dataset {
        put("dataset.path", path_value(p));
    }
    if let Some(p) = &args.output_dir {
        put("output_dir", path_value(p));
    }
    if let Some(m) = &args.mode {
        put("classifier.mode", Value::String(m.clone()));
    }
    if let Some(n) = args.workers {
        put("workers", n.into());
    }
    if let Some(n) = args.sample_size {
        put("sample.size", n.into());
    }
    if let Some(n) = args.sample_seed {
        put("sample.seed", n.into());
    }
    if let Some(p) = &args.cache_dir {
        put("embedding.cache_dir", path_value(p));
    }
    if let Some(s) = &args.embedding_provider {
        put("embedding.provider", Value::String(s.clone()));
    }
    if let Some(s) = &args.chat_provider {
        put("chat.provider", Value::String(s.clone()));
    }
    if let Some(s) = &args.task_description {
        put("classifier.task_description", Value::String(s.clone()));
    }
    for kv in &args.k {
        let (level, k) = kv.split_once('=').ok_or_else(|| CliError::Usage(format!("--k expects LEVEL=K, got {kv:?}")))?;
        let k: usize = k.parse().map_err(|_| CliError::Usage(format!("--k {kv:?}: K must be an integer")))?;
        sets.push((
            vec!["classifier".into(), "retrieval".into(), "k_per_level".into(), level.trim().into()],
            k.into(),
        ));
    }
    for raw in &args.set {
        sets.push(overrides::parse_assignment(raw).map_err(CliError::Usage)?);
    }
    for (keys, value) in sets {
        overrides::apply(&mut root, &keys, value).map_err(CliError::Usage)?;
    }
    serde_json::from_value(root).map_err(|e| CliError::Usage(format!("config: {e}")))
}
