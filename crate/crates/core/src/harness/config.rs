use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::classifier::ClassifierConfig;
use crate::embedding::{BuildOptions, HashEmbedder, RemoteEmbedderConfig};
use crate::llm::HttpChatConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetFormat {
    /// Delimited text. Fields are column names when `has_header`, otherwise
    /// zero-based column indices.
    Delimited {
        #[serde(default = "default_delimiter")]
        delimiter: char,
        #[serde(default = "yes")]
        has_header: bool,
    },
    /// One JSON object per line; fields are keys.
    Jsonl,
}

fn default_delimiter() -> char {
    ','
}

fn yes() -> bool {
    true
}

impl Default for DatasetFormat {
    fn default() -> Self {
        Self::Delimited { delimiter: ',', has_header: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub path: PathBuf,
    /// Short name recorded in reports; defaults to the file stem.
    pub name: Option<String>,
    pub format: DatasetFormat,
    /// Fields joined (non-empty ones only) into the document text.
    pub text_fields: Vec<String>,
    pub text_join: String,
    /// Gold label fields, level 1 first.
    pub gold_fields: Vec<String>,
    pub id_field: Option<String>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::new(),
            name: None,
            format: DatasetFormat::default(),
            text_fields: vec!["text".into()],
            text_join: " ".into(),
            gold_fields: Vec::new(),
            id_field: None,
        }
    }
}

impl DatasetConfig {
    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.path.file_stem().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaxonomySource {
    /// Induced from the dataset's gold columns.
    #[default]
    Induced,
    File {
        path: PathBuf,
        #[serde(default = "default_delimiter")]
        delimiter: char,
        #[serde(default)]
        has_header: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingProviderKind {
    #[default]
    MockHash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSettings {
    pub provider: EmbeddingProviderKind,
    pub mock_dim: usize,
    pub http: RemoteEmbedderConfig,
    /// Persistent cache directory; `None` keeps the cache in memory.
    pub cache_dir: Option<PathBuf>,
    pub build: BuildOptions,
}

impl Default for EmbeddingSettings {
    fn default() -> Self {
        Self {
            provider: EmbeddingProviderKind::MockHash,
            mock_dim: HashEmbedder::DEFAULT_DIM,
            http: RemoteEmbedderConfig::default(),
            cache_dir: None,
            build: BuildOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChatProviderKind {
    Http,
    #[default]
    MockEcho,
    MockScripted,
    MockConstant,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatSettings {
    pub provider: ChatProviderKind,
    pub http: HttpChatConfig,
    /// Responses for `mock-scripted`, consumed in call order.
    pub scripted_responses: Vec<String>,
    /// Response for `mock-constant`.
    pub constant_response: String,
    /// Write every exchange to `audit.jsonl` in the output directory.
    pub audit_log: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    /// Documents to classify; `None` means all.
    pub size: Option<usize>,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { size: None, seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub taxonomy: TaxonomySource,
    pub embedding: EmbeddingSettings,
    pub chat: ChatSettings,
    pub classifier: ClassifierConfig,
    pub workers: usize,
    pub sample: SampleConfig,
    pub output_dir: PathBuf,
    /// Abort (after flushing) when more than this fraction of documents fail.
    pub max_failure_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            taxonomy: TaxonomySource::Induced,
            embedding: EmbeddingSettings::default(),
            chat: ChatSettings::default(),
            classifier: ClassifierConfig::default(),
            workers: 1,
            sample: SampleConfig::default(),
            output_dir: PathBuf::from("runs/latest"),
            max_failure_fraction: 0.10,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("reading {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    /// Checks that do not need the taxonomy.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !self.dataset.path.is_file() {
            return bad(format!("dataset file {} does not exist", self.dataset.path.display()));
        }
        if let TaxonomySource::File { path, .. } = &self.taxonomy {
            if !path.is_file() {
                return bad(format!("taxonomy file {} does not exist", path.display()));
            }
        }
        if self.dataset.text_fields.is_empty() {
            return bad("dataset.text_fields is empty".into());
        }
        if self.dataset.gold_fields.is_empty() && self.taxonomy == TaxonomySource::Induced {
            return bad("an induced taxonomy needs dataset.gold_fields".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.max_failure_fraction) {
            return bad("max_failure_fraction must be in [0, 1]".into());
        }
        if self.sample.size == Some(0) {
            return bad("sample.size must be positive".into());
        }
        if self.embedding.provider == EmbeddingProviderKind::MockHash && self.embedding.mock_dim == 0 {
            return bad("embedding.mock_dim must be positive".into());
        }
        if self.chat.provider == ChatProviderKind::MockConstant && self.chat.constant_response.is_empty() {
            return bad("chat.constant_response must be set for mock-constant".into());
        }
        self.classifier.generation.validate().map_err(|e| HarnessError::Config(e.to_string()))
    }
}

pub fn delimiter_byte(c: char) -> Result<u8, HarnessError> {
    u8::try_from(c)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| HarnessError::Config(format!("delimiter {c:?} must be a single ASCII character")))
}
