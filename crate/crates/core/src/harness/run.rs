use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use serde::Serialize;

use super::config::{ChatProviderKind, ChatSettings, EmbeddingProviderKind, EmbeddingSettings, RunConfig};
use super::dataset::{ingest, sample_indices, Ingested};
use super::HarnessError;
use crate::classifier::{Classifier, Document, DocumentOutcome};
use crate::embedding::{
    embed, CachedEmbedder, EmbeddingCache, EmbeddingProvider, HashEmbedder, LevelIndex, RemoteEmbedder,
};
use crate::evaluation::{evaluate_run, MetricsReport};
use crate::llm::{AuditLog, CandidateEchoMock, ChatProvider, FnMock, HttpChatProvider, ScriptedMock};
use crate::prompt::{enumerate_paths, serialize_paths};
use crate::report::{read_run_report, write_jsonl, RunRecord};
use crate::retrieval::retrieve_subgraph;
use crate::taxonomy::Taxonomy;

pub const RUN_REPORT: &str = "run_report.jsonl";
pub const METRICS: &str = "metrics.json";
pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const PER_CLASS_CSV: &str = "per_class_f1.csv";
pub const AUDIT_LOG: &str = "audit.jsonl";

/// Ingested, sampled, and resolved inputs of a run.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// The input config with retrieval defaults filled in from the taxonomy.
    pub config: RunConfig,
    pub taxonomy: Taxonomy,
    /// Sampled documents, in file order.
    pub documents: Vec<Document>,
    pub total_documents: usize,
    pub dataset_name: String,
}

pub fn prepare(config: &RunConfig) -> Result<Prepared, HarnessError> {
    config.validate()?;
    let Ingested { documents, taxonomy } = ingest(&config.dataset, &config.taxonomy)?;
    let mut resolved = config.clone();
    resolved.classifier.retrieval = resolved.classifier.retrieval.with_defaults_from(&taxonomy);
    resolved.classifier.retrieval.validate(taxonomy.depth())?;
    let total_documents = documents.len();
    let picked = sample_indices(total_documents, config.sample.size, config.sample.seed);
    let documents = picked.into_iter().map(|i| documents[i].clone()).collect();
    Ok(Prepared {
        dataset_name: config.dataset.display_name(),
        config: resolved,
        taxonomy,
        documents,
        total_documents,
    })
}

pub fn build_embedding_provider(settings: &EmbeddingSettings) -> Result<Box<dyn EmbeddingProvider>, HarnessError> {
    Ok(match settings.provider {
        EmbeddingProviderKind::MockHash => Box::new(HashEmbedder::new(settings.mock_dim)),
        EmbeddingProviderKind::Http => Box::new(RemoteEmbedder::new(&settings.http)?),
    })
}

pub fn build_chat_provider(settings: &ChatSettings) -> Result<Box<dyn ChatProvider>, HarnessError> {
    Ok(match settings.provider {
        ChatProviderKind::Http => Box::new(HttpChatProvider::new(&settings.http)?),
        ChatProviderKind::MockEcho => Box::new(CandidateEchoMock),
        ChatProviderKind::MockScripted => Box::new(ScriptedMock::new(settings.scripted_responses.clone())),
        ChatProviderKind::MockConstant => {
            let answer = settings.constant_response.clone();
            Box::new(FnMock::new(move |_| Ok(answer.clone())))
        }
    })
}

pub fn open_cache(settings: &EmbeddingSettings) -> Result<EmbeddingCache, HarnessError> {
    match &settings.cache_dir {
        Some(dir) => {
            let cache = EmbeddingCache::open(dir)?;
            if cache.dropped_on_load() > 0 {
                log::warn!("embedding cache {}: dropped {} corrupt entries", dir.display(), cache.dropped_on_load());
            }
            Ok(cache)
        }
        None => Ok(EmbeddingCache::in_memory()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexSummary {
    pub labels: usize,
    pub per_level: Vec<usize>,
    pub provider_calls: usize,
    pub texts_embedded: usize,
    pub cache_entries: usize,
}

/// Build the label index through the cache and report what it cost.
pub fn build_index(
    prepared: &Prepared,
    embedder: &dyn EmbeddingProvider,
    cache: &EmbeddingCache,
) -> Result<(LevelIndex, IndexSummary), HarnessError> {
    let settings = &prepared.config.embedding;
    let cached = CachedEmbedder::new(embedder, cache).with_batch_size(settings.build.batch_size);
    let index = LevelIndex::build(&prepared.taxonomy, &cached, &settings.build)?;
    let summary = IndexSummary {
        labels: index.len(),
        per_level: (1..=index.depth()).map(|l| index.level_len(l)).collect(),
        provider_calls: cached.provider_calls(),
        texts_embedded: cached.texts_embedded(),
        cache_entries: cache.len(),
    };
    Ok((index, summary))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFiles {
    pub run_report: PathBuf,
    pub metrics: PathBuf,
    pub resolved_config: PathBuf,
    pub per_class_csv: PathBuf,
    pub audit_log: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub metrics: MetricsReport,
    pub records: Vec<RunRecord>,
    pub files: RunFiles,
    /// Requests that reached the embedding provider (cache misses).
    pub embedding_provider_calls: usize,
    pub documents_sampled: usize,
    pub documents_total: usize,
    /// Stopped early on request; reports cover started documents only.
    pub interrupted: bool,
}

/// Run with providers built from the config.
pub fn run(config: &RunConfig, cancel: Option<&AtomicBool>) -> Result<RunSummary, HarnessError> {
    let embedder = build_embedding_provider(&config.embedding)?;
    let chat = build_chat_provider(&config.chat)?;
    run_with(config, embedder.as_ref(), chat.as_ref(), cancel)
}

/// Ingest, index, classify, evaluate, and write every artifact to the
/// output directory. Reports are written before a provider abort is
/// returned.
pub fn run_with(
    config: &RunConfig,
    embedder: &dyn EmbeddingProvider,
    chat: &dyn ChatProvider,
    cancel: Option<&AtomicBool>,
) -> Result<RunSummary, HarnessError> {
    let prepared = prepare(config)?;
    let cfg = &prepared.config;
    let tax = &prepared.taxonomy;
    let cache = open_cache(&cfg.embedding)?;
    let cached = CachedEmbedder::new(embedder, &cache).with_batch_size(cfg.embedding.build.batch_size);
    let index = LevelIndex::build(tax, &cached, &cfg.embedding.build)?;

    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    let audit_path = cfg.chat.audit_log.then(|| out.join(AUDIT_LOG));
    let audit = match &audit_path {
        Some(p) => {
            if p.exists() {
                fs::remove_file(p)?;
            }
            Some(AuditLog::create(p)?)
        }
        None => None,
    };
    let mut classifier = Classifier::new(tax, &index, &cached, chat, &cfg.classifier);
    if let Some(a) = &audit {
        classifier = classifier.with_audit(a);
    }

    let docs = &prepared.documents;
    let limit = (cfg.max_failure_fraction * docs.len() as f64).floor() as usize;
    let stop = AtomicBool::new(false);
    let provider_failures = AtomicUsize::new(0);
    let observe = |o: &DocumentOutcome| {
        if matches!(&o.result, Err(e) if e.is_provider_failure())
            && provider_failures.fetch_add(1, Ordering::SeqCst) + 1 > limit
        {
            stop.store(true, Ordering::SeqCst);
        }
        if cancel.is_some_and(|c| c.load(Ordering::SeqCst)) {
            stop.store(true, Ordering::SeqCst);
        }
    };
    let outcomes = classifier.classify_all_observed(docs, cfg.workers, Some(&stop), &observe);
    let failed = provider_failures.load(Ordering::SeqCst);
    let aborted = failed > limit;
    let interrupted = !aborted && outcomes.len() < docs.len();

    let records: Vec<RunRecord> = outcomes
        .iter()
        .map(|o| RunRecord::from_outcome(tax, o, docs[o.index].gold.clone()))
        .collect();
    let metrics = evaluate_run(tax, &records, &prepared.dataset_name, cfg.classifier.mode.as_str())?;
    let files = RunFiles {
        run_report: out.join(RUN_REPORT),
        metrics: out.join(METRICS),
        resolved_config: out.join(RESOLVED_CONFIG),
        per_class_csv: out.join(PER_CLASS_CSV),
        audit_log: audit_path,
    };
    write_jsonl(&files.run_report, &records)?;
    write_json(&files.metrics, &metrics)?;
    write_json(&files.resolved_config, cfg)?;
    write_per_class_csv(&files.per_class_csv, &metrics)?;

    if aborted {
        return Err(HarnessError::ProviderAbort {
            failed,
            total: docs.len(),
            limit: cfg.max_failure_fraction * 100.0,
        });
    }
    Ok(RunSummary {
        metrics,
        records,
        files,
        embedding_provider_calls: cached.provider_calls(),
        documents_sampled: docs.len(),
        documents_total: prepared.total_documents,
        interrupted,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Every class of every level, most-supported first.
fn write_per_class_csv(path: &Path, metrics: &MetricsReport) -> Result<(), HarnessError> {
    let mut rows: Vec<(usize, &crate::evaluation::ClassReport)> = metrics
        .per_class_f1
        .iter()
        .enumerate()
        .flat_map(|(i, level)| level.iter().map(move |c| (i + 1, c)))
        .collect();
    rows.sort_by(|a, b| b.1.score.support.cmp(&a.1.score.support).then(a.0.cmp(&b.0)).then(a.1.name.cmp(&b.1.name)));
    let csv_err = |e: csv::Error| HarnessError::Io(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["level", "label", "support", "predicted", "precision", "recall", "f1"]).map_err(csv_err)?;
    for (level, c) in rows {
        w.write_record([
            level.to_string(),
            c.name.clone(),
            c.score.support.to_string(),
            c.score.predicted.to_string(),
            format!("{:.6}", c.score.precision),
            format!("{:.6}", c.score.recall),
            format!("{:.6}", c.score.f1),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Re-score an existing run report against the config's taxonomy.
pub fn evaluate_report(config: &RunConfig, report: &Path) -> Result<MetricsReport, HarnessError> {
    let Ingested { taxonomy, .. } = ingest(&config.dataset, &config.taxonomy)?;
    let records = read_run_report(report)?;
    Ok(evaluate_run(&taxonomy, &records, &config.dataset.display_name(), config.classifier.mode.as_str())?)
}

/// Human-readable per-level table.
pub fn format_metrics(m: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "dataset {}  mode {}  documents {} (scored {}, failed {})",
        m.dataset, m.mode, m.documents_total, m.documents_evaluated, m.documents_failed
    );
    let _ = writeln!(
        s,
        "{:<6} {:>7} {:>9} {:>9} {:>8} {:>8} {:>12} {:>9}",
        "level", "labels", "f1_macro", "accuracy", "decay", "hit@k", "hit@k_miss", "fallback"
    );
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |x| format!("{x:.4}"));
    for (i, size) in m.level_sizes.iter().enumerate() {
        let level = i + 1;
        let _ = writeln!(
            s,
            "{:<6} {:>7} {:>9} {:>9} {:>8} {:>8} {:>12} {:>9}",
            level,
            size,
            opt(m.per_level_f1_macro.get(i).copied()),
            opt(m.per_level_accuracy.get(i).copied()),
            opt(i.checked_sub(1).and_then(|j| m.decay_per_level.get(j).copied())),
            opt(m.hit_at_k.get(&level).copied()),
            opt(m.hit_at_k_misclassified.get(&level).copied()),
            opt(m.fallback_rate.get(i).copied()),
        );
    }
    let _ = writeln!(s, "decay avg {}", opt(m.decay_avg));
    s
}

/// Retrieval trace for one document: candidates per level, subgraph edges,
/// and the full-depth paths that would go into its prompt.
pub fn debug_document(
    prepared: &Prepared,
    embedder: &dyn EmbeddingProvider,
    cache: &EmbeddingCache,
    document_id: &str,
) -> Result<String, HarnessError> {
    let doc = prepared
        .documents
        .iter()
        .find(|d| d.id == document_id)
        .ok_or_else(|| HarnessError::Config(format!("no document with id {document_id:?}")))?;
    let tax = &prepared.taxonomy;
    let (index, _) = build_index(prepared, embedder, cache)?;
    let cached = CachedEmbedder::new(embedder, cache);
    let x = embed(&cached, &doc.text)?;
    let r = retrieve_subgraph(tax, &index, &x, &prepared.config.classifier.retrieval)?;

    let mut s = String::new();
    let _ = writeln!(s, "document {}", doc.id);
    let _ = writeln!(s, "text {}", doc.text);
    if let Some(g) = &doc.gold {
        let _ = writeln!(s, "gold {}", g.join(" -> "));
    }
    for set in &r.candidates {
        let _ = writeln!(s, "\nlevel {} candidates ({})", set.level, set.len());
        for c in &set.members {
            let _ = writeln!(s, "  {:.6}  {}", c.distance, tax.name(c.label));
        }
    }
    let _ = writeln!(s, "\nsubgraph edges ({})", r.subgraph.edges.len());
    for line in r.subgraph.dump(tax).lines() {
        let _ = writeln!(s, "  {line}");
    }
    let paths = enumerate_paths(tax, &r.subgraph);
    let _ = writeln!(s, "\npaths ({})", paths.len());
    for line in serialize_paths(tax, &paths).lines() {
        let _ = writeln!(s, "  {line}");
    }
    Ok(s)
}
