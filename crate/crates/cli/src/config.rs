//! Run configuration, read from a single TOML file.
//!
//! | key | default |
//! |-----|---------|
//! | `corpus_path`, `dataset_path` | required |
//! | `output_dir` | `"out"` |
//! | `top_k_context` | `3` |
//! | `variant` | `"RAG"` (`NO_RAG`, `RAG`, `SRAG_S`, `SRAG_D`) |
//! | `retriever.kind` | `"bm25"` (`dense`, `bm25_dense_rerank`, `ideal`) |
//! | `retriever.k1`, `retriever.b` | `1.2`, `0.75` |
//! | `retriever.rerank_depth` | `100` |
//! | `retriever.fallback` | `"bm25"` (ranks 2..k of `ideal`) |
//! | `hint.ranker` | `"bm25"` (`dense`) |
//! | `hint.k` | `top_k_context` |
//! | `generator` | `{ mock = { kind = "echo" } }` |
//! | `generator.mock.max_concurrency` | `4` |
//! | `embedder` | none; `http`, `vectors` or `mock` |
//! | `prompt.separator` | `" "` |
//! | `prompt.include_titles` | `false` |
//! | `eval.log_base` | `"10"` |
//! | `eval.edges` | `[2,3,4,5]` for base 10, `[6,8,10,12]` for base 2 |
//! | `eval.recall_ks` | `[1, 3, 5]` |
//! | `eval.significance` | every pair of evaluated runs |
//! | `augment.template` | built-in step-by-step QA prompt |
//! | `augment.filter` | `true` |
//! | `augment.flattened` | `true` |

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use srag_core::client::mock::ExtractScope;
use srag_core::client::EndpointConfig;
use srag_core::eval::{BucketEdges, LogBase};
use srag_core::hint::HintMode;
use srag_core::prompt::{PromptOptions, PromptVariant, DEFAULT_SEPARATOR};
use srag_core::retrieval::{Bm25Params, DEFAULT_RERANK_DEPTH};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrieverKind {
    Bm25,
    Dense,
    Bm25DenseRerank,
    Ideal,
}

impl RetrieverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RetrieverKind::Bm25 => "bm25",
            RetrieverKind::Dense => "dense",
            RetrieverKind::Bm25DenseRerank => "bm25_dense_rerank",
            RetrieverKind::Ideal => "ideal",
        }
    }

    pub fn needs_embedder(self) -> bool {
        matches!(self, RetrieverKind::Dense | RetrieverKind::Bm25DenseRerank)
    }
}

impl fmt::Display for RetrieverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RetrieverKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bm25" => Ok(RetrieverKind::Bm25),
            "dense" => Ok(RetrieverKind::Dense),
            "bm25_dense_rerank" => Ok(RetrieverKind::Bm25DenseRerank),
            "ideal" => Ok(RetrieverKind::Ideal),
            other => Err(ConfigError::Invalid(format!(
                "unknown retriever {other:?} (expected bm25, dense, bm25_dense_rerank or ideal)"
            ))),
        }
    }
}

/// Pipeline variant: prompt template plus, for SRAG, the hint mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "NO_RAG")]
    NoRag,
    #[serde(rename = "RAG")]
    Rag,
    #[serde(rename = "SRAG_S")]
    SragS,
    #[serde(rename = "SRAG_D")]
    SragD,
}

impl Variant {
    pub fn prompt_variant(self) -> PromptVariant {
        match self {
            Variant::NoRag => PromptVariant::NoRag,
            Variant::Rag => PromptVariant::Rag,
            Variant::SragS | Variant::SragD => PromptVariant::Srag,
        }
    }

    pub fn hint_mode(self) -> Option<HintMode> {
        match self {
            Variant::SragS => Some(HintMode::Sentence),
            Variant::SragD => Some(HintMode::Document),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::NoRag => "NO_RAG",
            Variant::Rag => "RAG",
            Variant::SragS => "SRAG_S",
            Variant::SragD => "SRAG_D",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "NO_RAG" => Ok(Variant::NoRag),
            "RAG" => Ok(Variant::Rag),
            "SRAG_S" => Ok(Variant::SragS),
            "SRAG_D" => Ok(Variant::SragD),
            _ => Err(ConfigError::Invalid(format!(
                "unknown variant {s:?} (expected NO_RAG, RAG, SRAG_S or SRAG_D)"
            ))),
        }
    }
}

fn default_k1() -> f64 {
    Bm25Params::default().k1
}
fn default_b() -> f64 {
    Bm25Params::default().b
}
fn default_rerank_depth() -> usize {
    DEFAULT_RERANK_DEPTH
}
fn default_fallback() -> RetrieverKind {
    RetrieverKind::Bm25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrieverConfig {
    pub kind: RetrieverKind,
    #[serde(default = "default_k1")]
    pub k1: f64,
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default = "default_rerank_depth")]
    pub rerank_depth: usize,
    /// Fills ranks 2..k of the Ideal retriever.
    #[serde(default = "default_fallback")]
    pub fallback: RetrieverKind,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        RetrieverConfig {
            kind: RetrieverKind::Bm25,
            k1: default_k1(),
            b: default_b(),
            rerank_depth: default_rerank_depth(),
            fallback: default_fallback(),
        }
    }
}

impl RetrieverConfig {
    pub fn bm25_params(&self) -> Bm25Params {
        Bm25Params { k1: self.k1, b: self.b }
    }

    /// Whether this retriever, directly or through its fallback, needs vectors.
    pub fn needs_embedder(&self) -> bool {
        self.kind.needs_embedder() || (self.kind == RetrieverKind::Ideal && self.fallback.needs_embedder())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HintRanker {
    #[default]
    Bm25,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct HintConfig {
    #[serde(default)]
    pub ranker: HintRanker,
    /// Documents whose sentences form the hint pool; defaults to `top_k_context`.
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MockBehaviour {
    /// Returns the prompt.
    Echo,
    /// Returns `output` for every prompt.
    Fixed { output: String },
    /// Returns regex matches found in the prompt's context.
    Extractive {
        pattern: String,
        #[serde(default)]
        scope: ExtractScope,
    },
}

fn default_concurrency() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockGenerator {
    #[serde(flatten)]
    pub behaviour: MockBehaviour,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorConfig {
    Http(EndpointConfig),
    Mock(MockGenerator),
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig::Mock(MockGenerator {
            behaviour: MockBehaviour::Echo,
            max_concurrency: default_concurrency(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderConfig {
    Http(EndpointConfig),
    /// Precomputed vectors: documents keyed by doc id, questions by qa id.
    Vectors {
        documents: PathBuf,
        queries: PathBuf,
    },
    /// Feature-hashing embedder of the given dimension.
    Mock {
        dim: usize,
    },
}

fn default_recall_ks() -> Vec<usize> {
    vec![1, 3, 5]
}
fn default_log_base() -> LogBase {
    LogBase::Ten
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_log_base")]
    pub log_base: LogBase,
    #[serde(default)]
    pub edges: Option<Vec<f64>>,
    #[serde(default = "default_recall_ks")]
    pub recall_ks: Vec<usize>,
    /// Run-label pairs to test; empty means every pair.
    #[serde(default)]
    pub significance: Vec<[String; 2]>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            log_base: default_log_base(),
            edges: None,
            recall_ks: default_recall_ks(),
            significance: Vec::new(),
        }
    }
}

impl EvalConfig {
    pub fn bucket_edges(&self) -> Result<BucketEdges, ConfigError> {
        match &self.edges {
            None => Ok(self.log_base.default_edges()),
            Some(e) => BucketEdges::new(e).map_err(|e| ConfigError::Invalid(e.to_string())),
        }
    }
}

fn default_separator() -> String {
    DEFAULT_SEPARATOR.to_owned()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptConfig {
    #[serde(default = "default_separator")]
    pub separator: String,
    #[serde(default)]
    pub include_titles: bool,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            separator: default_separator(),
            include_titles: false,
        }
    }
}

impl PromptConfig {
    pub fn options(&self) -> PromptOptions {
        PromptOptions {
            separator: self.separator.clone(),
            include_titles: self.include_titles,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    #[serde(default)]
    pub template: Option<String>,
    #[serde(default = "yes")]
    pub filter: bool,
    #[serde(default = "yes")]
    pub flattened: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            template: None,
            filter: true,
            flattened: true,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_top_k() -> usize {
    3
}
fn default_variant() -> Variant {
    Variant::Rag
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus_path: PathBuf,
    pub dataset_path: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub retriever: RetrieverConfig,
    #[serde(default = "default_top_k")]
    pub top_k_context: usize,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default)]
    pub hint: Option<HintConfig>,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub embedder: Option<EmbedderConfig>,
    #[serde(default)]
    pub prompt: PromptConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub retriever: Option<String>,
    pub variant: Option<String>,
    pub top_k: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(corpus_path: impl Into<PathBuf>, dataset_path: impl Into<PathBuf>) -> Self {
        RunConfig {
            corpus_path: corpus_path.into(),
            dataset_path: dataset_path.into(),
            output_dir: default_output_dir(),
            retriever: RetrieverConfig::default(),
            top_k_context: default_top_k(),
            variant: default_variant(),
            hint: None,
            generator: GeneratorConfig::default(),
            embedder: None,
            prompt: PromptConfig::default(),
            eval: EvalConfig::default(),
            augment: AugmentConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Reads `path`; relative data paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text).map_err(|e| ConfigError::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus_path);
        fix(&mut self.dataset_path);
        fix(&mut self.output_dir);
        if let Some(EmbedderConfig::Vectors { documents, queries }) = &mut self.embedder {
            fix(documents);
            fix(queries);
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), ConfigError> {
        if let Some(r) = &o.retriever {
            self.retriever.kind = r.parse()?;
        }
        if let Some(v) = &o.variant {
            self.variant = v.parse()?;
        }
        if let Some(k) = o.top_k {
            self.top_k_context = k;
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.variant != Variant::NoRag && self.top_k_context == 0 {
            return invalid(format!("variant {} needs top_k_context >= 1", self.variant));
        }
        if self.variant.hint_mode().is_some() && self.hint.is_none() {
            return invalid(format!("variant {} needs a [hint] section", self.variant));
        }
        if self.hint_k() == 0 && self.variant.hint_mode().is_some() {
            return invalid("hint.k must be at least 1".into());
        }
        if self.retriever.needs_embedder() && self.embedder.is_none() {
            return invalid(format!("retriever {} needs an [embedder] section", self.retriever.kind));
        }
        if self.retriever.kind == RetrieverKind::Ideal && self.retriever.fallback == RetrieverKind::Ideal {
            return invalid("the ideal retriever cannot be its own fallback".into());
        }
        if self.retriever.rerank_depth == 0 {
            return invalid("retriever.rerank_depth must be at least 1".into());
        }
        if !(self.retriever.k1 >= 0.0 && (0.0..=1.0).contains(&self.retriever.b)) {
            return invalid("retriever.k1 must be >= 0 and retriever.b within [0, 1]".into());
        }
        if let Some(h) = &self.hint {
            if self.variant.hint_mode().is_some() && h.ranker == HintRanker::Dense {
                match &self.embedder {
                    None => return invalid("hint.ranker = \"dense\" needs an [embedder] section".into()),
                    Some(EmbedderConfig::Vectors { .. }) => {
                        return invalid(
                            "hint.ranker = \"dense\" needs an embedder that can embed sentences (http or mock)".into(),
                        )
                    }
                    Some(_) => {}
                }
            }
        }
        match &self.generator {
            GeneratorConfig::Http(e) => e.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?,
            GeneratorConfig::Mock(m) => {
                if m.max_concurrency == 0 {
                    return invalid("generator max_concurrency must be at least 1".into());
                }
                if let MockBehaviour::Extractive { pattern, .. } = &m.behaviour {
                    regex_check(pattern)?;
                }
            }
        }
        match &self.embedder {
            Some(EmbedderConfig::Http(e)) => e.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?,
            Some(EmbedderConfig::Mock { dim: 0 }) => return invalid("embedder mock dim must be at least 1".into()),
            _ => {}
        }
        self.eval.bucket_edges()?;
        Ok(())
    }

    pub fn hint_k(&self) -> usize {
        self.hint.as_ref().and_then(|h| h.k).unwrap_or(self.top_k_context)
    }

    /// Depth to retrieve so that context, hint pool and recall all fit.
    pub fn retrieval_depth(&self) -> usize {
        let recall = self.eval.recall_ks.iter().copied().max().unwrap_or(0);
        let hint = if self.variant.hint_mode().is_some() {
            self.hint_k()
        } else {
            0
        };
        self.top_k_context.max(hint).max(recall).max(1)
    }
}

fn regex_check(pattern: &str) -> Result<(), ConfigError> {
    srag_core::client::mock::ExtractiveBackend::new(pattern, ExtractScope::Context)
        .map(|_| ())
        .map_err(|e| ConfigError::Invalid(format!("bad extractive pattern: {e}")))
}
