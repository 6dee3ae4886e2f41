//! Config-driven pipeline: ingest, index, classify, evaluate, compare.

mod compare;
mod config;
mod dataset;
mod run;

pub use compare::{compare, Comparison, LevelDelta};
pub use config::{
    ChatProviderKind, ChatSettings, DatasetConfig, DatasetFormat, EmbeddingProviderKind, EmbeddingSettings, RunConfig,
    SampleConfig, TaxonomySource,
};
pub use dataset::{ingest, sample_indices, Ingested};
pub use run::{
    build_chat_provider, build_embedding_provider, build_index, debug_document, evaluate_report, format_metrics,
    open_cache, prepare, run, run_with, IndexSummary, Prepared, RunFiles, RunSummary,
};

use thiserror::Error;

use crate::classifier::ClassifyError;
use crate::embedding::{EmbedError, IndexError};
use crate::evaluation::EvalError;
use crate::llm::LlmError;
use crate::taxonomy::TaxonomyError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{failed} of {total} documents failed at the provider (limit {limit:.0}%); partial results written")]
    ProviderAbort { failed: usize, total: usize, limit: f64 },
    #[error("reports do not cover the same dataset: {0}")]
    DatasetMismatch(String),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl HarnessError {
    /// Process exit code: 1 usage/config, 2 provider abort, 3 parse error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Parse { .. } | Self::Taxonomy(_) => 3,
            Self::ProviderAbort { .. } => 2,
            Self::Index(IndexError::Embed(EmbedError::Provider { .. })) | Self::Embed(EmbedError::Provider { .. }) => 2,
            Self::Llm(LlmError::ProviderExhausted { .. } | LlmError::Auth(_)) => 2,
            _ => 1,
        }
    }
}
