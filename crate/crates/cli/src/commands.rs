//! The pipeline stages. Each reads its inputs from the run configuration
//! and writes its outputs, with manifests, under `output_dir`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use srag_core::client::mock::{EchoBackend, ExtractiveBackend, FixedBackend, HashingEmbedder};
use srag_core::client::qa::{flatten_qa_pairs, generate_qa_pairs, QAPair, DEFAULT_QA_PROMPT};
use srag_core::client::{ClientError, CompletionBackend, Embedder, EmbeddingClient, Generator, RetryPolicy};
use srag_core::corpus::{load_corpus, Corpus, CorpusError, Document};
use srag_core::eval::{
    assign_bucket, build_report, compare_runs, is_correct, load_dataset, load_results, render_text, EvalError,
    EvalReport, HintSummary, InstanceResult, QAInstance, SignificanceRow,
};
use srag_core::hint::{extract_hint, Bm25SentenceScorer, DenseSentenceScorer, SentenceScorer};
use srag_core::prompt::{build_prompt, PromptSpec};
use srag_core::retrieval::{
    Bm25Retriever, DenseIndex, DenseRetriever, IdealRetriever, Query, RankedList, RetrievalError, Retriever,
    SparseIndex, TwoStageRetriever,
};
use thiserror::Error;

use crate::config::{
    ConfigError, EmbedderConfig, GeneratorConfig, HintRanker, MockBehaviour, RetrieverKind, RunConfig, Variant,
};
use crate::manifest::{sha256_file, ManifestBuilder, RunManifest};

pub const SPARSE_INDEX_FILE: &str = "index/sparse_index.json";
pub const DOC_VECTORS_FILE: &str = "index/doc_vectors.jsonl";
pub const RUN_FILE: &str = "run.jsonl";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const QA_FILE: &str = "synthetic_qa.jsonl";
pub const QA_FLAT_FILE: &str = "synthetic_qa_flat.txt";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

/// Texts sent per embedding request.
const EMBED_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{what} not found at {path}; run `{producer}` first")]
    MissingArtifact {
        what: &'static str,
        path: PathBuf,
        producer: &'static str,
    },
    #[error("{0}")]
    Data(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CommandError + '_ {
    move |source| CommandError::Io {
        path: path.to_owned(),
        source,
    }
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item).expect("in-memory serialization");
        out.push(b'\n');
    }
    out
}

fn require(path: PathBuf, what: &'static str, producer: &'static str) -> Result<PathBuf, CommandError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CommandError::MissingArtifact { what, path, producer })
    }
}

/// Runs `f` over `items` on up to `workers` threads; output keeps input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

pub fn build_generator(cfg: &GeneratorConfig) -> Result<Generator, CommandError> {
    match cfg {
        GeneratorConfig::Http(endpoint) => Ok(Generator::http(endpoint)?),
        GeneratorConfig::Mock(m) => {
            let backend: Box<dyn CompletionBackend> = match &m.behaviour {
                MockBehaviour::Echo => Box::new(EchoBackend),
                MockBehaviour::Fixed { output } => Box::new(FixedBackend::new(output.clone())),
                MockBehaviour::Extractive { pattern, scope } => Box::new(
                    ExtractiveBackend::new(pattern, *scope)
                        .map_err(|e| ConfigError::Invalid(format!("bad extractive pattern: {e}")))?,
                ),
            };
            Ok(Generator::new(backend, RetryPolicy::immediate(0), m.max_concurrency))
        }
    }
}

/// An embedder for arbitrary text, unless vectors come from files.
fn text_embedder(cfg: &EmbedderConfig) -> Result<Option<Box<dyn Embedder>>, CommandError> {
    Ok(match cfg {
        EmbedderConfig::Http(e) => Some(Box::new(EmbeddingClient::http(e)?)),
        EmbedderConfig::Mock { dim } => Some(Box::new(HashingEmbedder::new(*dim))),
        EmbedderConfig::Vectors { .. } => None,
    })
}

fn embed_all(embedder: &dyn Embedder, texts: &[String]) -> Result<Vec<Vec<f64>>, CommandError> {
    let mut out = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(EMBED_BATCH) {
        out.extend(embedder.embed(chunk)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSummary {
    pub documents: usize,
    pub sparse_path: PathBuf,
    pub sparse_sha256: String,
    pub dense_path: Option<PathBuf>,
}

/// Builds the BM25 index and, when an embedder is configured, the document
/// vector store.
pub fn cmd_index(cfg: &RunConfig) -> Result<IndexSummary, CommandError> {
    cfg.validate()?;
    let corpus = load_corpus(&cfg.corpus_path)?;
    let mut manifest = ManifestBuilder::new("index", cfg);
    manifest
        .input("corpus", &cfg.corpus_path)
        .map_err(io_err(&cfg.corpus_path))?;

    let sparse = SparseIndex::build(&corpus).with_params(cfg.retriever.bm25_params());
    let sparse_path = cfg.output_dir.join(SPARSE_INDEX_FILE);
    let mut bytes = serde_json::to_vec(&sparse).expect("in-memory serialization");
    bytes.push(b'\n');
    let m = manifest.emit(&sparse_path, &bytes).map_err(io_err(&sparse_path))?;
    log::info!("indexed {} documents into {}", corpus.len(), sparse_path.display());

    let dense_path = match &cfg.embedder {
        None => None,
        Some(e) => {
            let dense = document_vectors(e, &corpus, &mut manifest)?;
            let path = cfg.output_dir.join(DOC_VECTORS_FILE);
            let mut out = Vec::new();
            dense.write_jsonl(&mut out).map_err(io_err(&path))?;
            manifest.emit(&path, &out).map_err(io_err(&path))?;
            log::info!(
                "wrote {} vectors (dim {}) to {}",
                dense.len(),
                dense.dim(),
                path.display()
            );
            Some(path)
        }
    };
    Ok(IndexSummary {
        documents: corpus.len(),
        sparse_path,
        sparse_sha256: m.output_sha256,
        dense_path,
    })
}

fn document_vectors(
    cfg: &EmbedderConfig,
    corpus: &Corpus,
    manifest: &mut ManifestBuilder,
) -> Result<DenseIndex, CommandError> {
    if let EmbedderConfig::Vectors { documents, .. } = cfg {
        manifest.input("doc_vectors", documents).map_err(io_err(documents))?;
        let index = DenseIndex::load(documents)?;
        if let Some(d) = corpus.documents().iter().find(|d| index.get(&d.doc_id).is_none()) {
            return Err(RetrievalError::MissingVector(d.doc_id.clone()).into());
        }
        return Ok(index);
    }
    let embedder = text_embedder(cfg)?.expect("non-file embedder");
    if corpus.is_empty() {
        return Ok(DenseIndex::default());
    }
    let texts: Vec<String> = corpus.documents().iter().map(|d| d.text.clone()).collect();
    let vectors = embed_all(embedder.as_ref(), &texts)?;
    Ok(DenseIndex::from_vectors(
        corpus.documents().iter().map(|d| d.doc_id.clone()).zip(vectors),
    )?)
}

fn load_sparse(cfg: &RunConfig) -> Result<SparseIndex, CommandError> {
    let path = require(cfg.output_dir.join(SPARSE_INDEX_FILE), "sparse index", "index")?;
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let index: SparseIndex =
        serde_json::from_str(&text).map_err(|e| CommandError::Data(format!("{}: {e}", path.display())))?;
    Ok(index.with_params(cfg.retriever.bm25_params()))
}

fn load_dense(cfg: &RunConfig) -> Result<DenseIndex, CommandError> {
    let path = require(cfg.output_dir.join(DOC_VECTORS_FILE), "document vectors", "index")?;
    Ok(DenseIndex::load(&path)?)
}

/// Question vectors keyed by qa id.
fn query_vectors(cfg: &EmbedderConfig, dataset: &[QAInstance]) -> Result<BTreeMap<String, Vec<f64>>, CommandError> {
    if let EmbedderConfig::Vectors { queries, .. } = cfg {
        let index = DenseIndex::load(queries)?;
        return dataset
            .iter()
            .map(|q| {
                index
                    .get(&q.qa_id)
                    .map(|v| (q.qa_id.clone(), v.to_vec()))
                    .ok_or_else(|| CommandError::Data(format!("no query vector for question {:?}", q.qa_id)))
            })
            .collect();
    }
    let embedder = text_embedder(cfg)?.expect("non-file embedder");
    if dataset.is_empty() {
        return Ok(BTreeMap::new());
    }
    let texts: Vec<String> = dataset.iter().map(|q| q.question.clone()).collect();
    let vectors = embed_all(embedder.as_ref(), &texts)?;
    Ok(dataset.iter().map(|q| q.qa_id.clone()).zip(vectors).collect())
}

fn basic_retriever<'a>(
    kind: RetrieverKind,
    depth: usize,
    sparse: Option<&'a SparseIndex>,
    dense: Option<&'a DenseIndex>,
) -> Box<dyn Retriever + 'a> {
    match kind {
        RetrieverKind::Bm25 => Box::new(Bm25Retriever {
            index: sparse.expect("sparse index loaded"),
        }),
        RetrieverKind::Dense => Box::new(DenseRetriever {
            index: dense.expect("dense index loaded"),
        }),
        RetrieverKind::Bm25DenseRerank => Box::new(TwoStageRetriever {
            sparse: sparse.expect("sparse index loaded"),
            dense: dense.expect("dense index loaded"),
            depth,
        }),
        RetrieverKind::Ideal => unreachable!("rejected by validation"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrieveSummary {
    pub questions: usize,
    pub depth: usize,
    pub path: PathBuf,
}

/// One ranked list per question, in dataset order.
pub fn cmd_retrieve(cfg: &RunConfig) -> Result<RetrieveSummary, CommandError> {
    cfg.validate()?;
    let corpus = load_corpus(&cfg.corpus_path)?;
    let dataset = load_dataset(&cfg.dataset_path)?;
    let mut manifest = ManifestBuilder::new("retrieve", cfg);
    manifest
        .input("corpus", &cfg.corpus_path)
        .map_err(io_err(&cfg.corpus_path))?;
    manifest
        .input("dataset", &cfg.dataset_path)
        .map_err(io_err(&cfg.dataset_path))?;

    let rc = &cfg.retriever;
    let base_kind = if rc.kind == RetrieverKind::Ideal {
        rc.fallback
    } else {
        rc.kind
    };
    let sparse = if base_kind != RetrieverKind::Dense {
        let s = load_sparse(cfg)?;
        manifest.input_hash(
            "sparse_index",
            sha256_file(&cfg.output_dir.join(SPARSE_INDEX_FILE)).map_err(io_err(&cfg.output_dir))?,
        );
        Some(s)
    } else {
        None
    };
    let (dense, vectors) = if base_kind.needs_embedder() {
        let d = load_dense(cfg)?;
        let path = cfg.output_dir.join(DOC_VECTORS_FILE);
        manifest.input("doc_vectors", &path).map_err(io_err(&path))?;
        let embedder = cfg.embedder.as_ref().expect("validated");
        if let EmbedderConfig::Vectors { queries, .. } = embedder {
            manifest.input("query_vectors", queries).map_err(io_err(queries))?;
        }
        (Some(d), query_vectors(embedder, &dataset)?)
    } else {
        (None, BTreeMap::new())
    };

    let base = basic_retriever(base_kind, rc.rerank_depth, sparse.as_ref(), dense.as_ref());
    let retriever: Box<dyn Retriever + '_> = if rc.kind == RetrieverKind::Ideal {
        Box::new(IdealRetriever {
            corpus: &corpus,
            fallback: base,
        })
    } else {
        base
    };

    let depth = cfg.retrieval_depth();
    let mut runs = Vec::with_capacity(dataset.len());
    for q in &dataset {
        let query = Query {
            id: &q.qa_id,
            text: &q.question,
            vector: vectors.get(&q.qa_id).map(Vec::as_slice),
            entity_id: Some(&q.entity_id),
        };
        let ranked = retriever
            .retrieve(&query, depth)
            .map_err(|e| CommandError::Data(format!("question {:?}: {e}", q.qa_id)))?;
        runs.push(ranked);
    }
    let path = cfg.output_dir.join(RUN_FILE);
    manifest.emit(&path, &jsonl(&runs)).map_err(io_err(&path))?;
    log::info!(
        "{} retrieved top-{depth} for {} questions",
        retriever.name(),
        runs.len()
    );
    Ok(RetrieveSummary {
        questions: runs.len(),
        depth,
        path,
    })
}

pub fn read_run(path: &Path) -> Result<BTreeMap<String, RankedList>, CommandError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: RankedList = serde_json::from_str(&line)
            .map_err(|e| CommandError::Data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        if out.insert(r.query_id.clone(), r).is_some() {
            return Err(CommandError::Data(format!(
                "{} line {}: duplicate query id",
                path.display(),
                i + 1
            )));
        }
    }
    Ok(out)
}

struct GenerateContext<'a> {
    cfg: &'a RunConfig,
    corpus: &'a Corpus,
    runs: &'a BTreeMap<String, RankedList>,
    generator: &'a Generator,
    scorer: Option<&'a dyn SentenceScorer>,
}

struct Answer {
    prediction: String,
    retrieved: Vec<String>,
    hint: Option<HintSummary>,
}

impl GenerateContext<'_> {
    fn docs(&self, ranked: &RankedList, k: usize) -> Result<Vec<&Document>, String> {
        ranked
            .doc_ids()
            .take(k)
            .map(|id| {
                self.corpus
                    .get(id)
                    .ok_or_else(|| format!("retrieved document {id:?} is not in the corpus"))
            })
            .collect()
    }

    fn answer(&self, q: &QAInstance) -> Result<Answer, String> {
        let variant = self.cfg.variant;
        let (context, retrieved, ranked) = if variant == Variant::NoRag {
            (Vec::new(), Vec::new(), None)
        } else {
            let ranked = self
                .runs
                .get(&q.qa_id)
                .ok_or("no retrieval run entry for this question")?;
            let docs = self.docs(ranked, self.cfg.top_k_context)?;
            (docs, ranked.doc_ids().map(str::to_owned).collect(), Some(ranked))
        };
        let hint = match (variant.hint_mode(), ranked, self.scorer) {
            (Some(mode), Some(ranked), Some(scorer)) => {
                let pool = self.docs(ranked, self.cfg.hint_k())?;
                Some(extract_hint(&q.question, &pool, scorer, mode).map_err(|e| format!("hint: {e}"))?)
            }
            _ => None,
        };
        let spec = PromptSpec {
            variant: variant.prompt_variant(),
            context_docs: context,
            hint: hint.as_ref(),
            question: &q.question,
        };
        let prompt = build_prompt(&spec, &self.cfg.prompt.options()).map_err(|e| format!("prompt: {e}"))?;
        let out = self
            .generator
            .generate_answer(&prompt)
            .map_err(|e| format!("generation: {e}"))?;
        Ok(Answer {
            prediction: out.output_text,
            retrieved,
            hint: hint.as_ref().map(HintSummary::from),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSummary {
    pub instances: usize,
    pub errors: usize,
    pub accuracy: f64,
    pub path: PathBuf,
}

/// Answers every question; a failed instance becomes an incorrect row with
/// its error recorded.
pub fn cmd_generate(cfg: &RunConfig) -> Result<GenerateSummary, CommandError> {
    cfg.validate()?;
    let corpus = load_corpus(&cfg.corpus_path)?;
    let dataset = load_dataset(&cfg.dataset_path)?;
    let edges = cfg.eval.bucket_edges()?;
    let mut manifest = ManifestBuilder::new("generate", cfg);
    manifest
        .input("corpus", &cfg.corpus_path)
        .map_err(io_err(&cfg.corpus_path))?;
    manifest
        .input("dataset", &cfg.dataset_path)
        .map_err(io_err(&cfg.dataset_path))?;
    let runs = if cfg.variant == Variant::NoRag {
        BTreeMap::new()
    } else {
        let path = require(cfg.output_dir.join(RUN_FILE), "retrieval run", "retrieve")?;
        manifest.input("run", &path).map_err(io_err(&path))?;
        read_run(&path)?
    };
    let generator = build_generator(&cfg.generator)?;

    let bm25 = Bm25SentenceScorer {
        params: cfg.retriever.bm25_params(),
    };
    let hint_embedder = match (&cfg.hint, &cfg.embedder) {
        (Some(h), Some(e)) if h.ranker == HintRanker::Dense && cfg.variant.hint_mode().is_some() => text_embedder(e)?,
        _ => None,
    };
    let dense = hint_embedder
        .as_deref()
        .map(|embedder| DenseSentenceScorer { embedder });
    let scorer: Option<&dyn SentenceScorer> = match (&dense, cfg.variant.hint_mode()) {
        (_, None) => None,
        (Some(d), Some(_)) => Some(d),
        (None, Some(_)) => Some(&bm25),
    };

    let ctx = GenerateContext {
        cfg,
        corpus: &corpus,
        runs: &runs,
        generator: &generator,
        scorer,
    };
    let mut results = parallel_map(&dataset, generator.max_concurrency(), |q| {
        let bucket = assign_bucket(q.pageviews, cfg.eval.log_base, &edges).expect("edges validated");
        match ctx.answer(q) {
            Ok(a) => InstanceResult {
                qa_id: q.qa_id.clone(),
                correct: is_correct(&a.prediction, &q.gold_answers),
                prediction: a.prediction,
                bucket,
                retrieved_doc_ids: a.retrieved,
                hint_used: a.hint,
                error: None,
            },
            Err(e) => {
                log::warn!("question {:?}: {e}", q.qa_id);
                InstanceResult {
                    qa_id: q.qa_id.clone(),
                    prediction: String::new(),
                    correct: false,
                    bucket,
                    retrieved_doc_ids: runs
                        .get(&q.qa_id)
                        .map(|r| r.doc_ids().map(str::to_owned).collect())
                        .unwrap_or_default(),
                    hint_used: None,
                    error: Some(e),
                }
            }
        }
    });
    results.sort_by(|a, b| a.qa_id.cmp(&b.qa_id));

    let path = cfg.output_dir.join(RESULTS_FILE);
    manifest.emit(&path, &jsonl(&results)).map_err(io_err(&path))?;
    let errors = results.iter().filter(|r| r.error.is_some()).count();
    Ok(GenerateSummary {
        instances: results.len(),
        errors,
        accuracy: srag_core::eval::accuracy(&results),
        path,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSummary {
    pub documents: usize,
    pub pairs: usize,
    pub failures: Vec<(String, String)>,
    pub path: PathBuf,
    pub flattened_path: Option<PathBuf>,
}

/// Generates QA pairs from the summary documents.
pub fn cmd_augment(cfg: &RunConfig) -> Result<AugmentSummary, CommandError> {
    cfg.validate()?;
    let corpus = load_corpus(&cfg.corpus_path)?;
    let mut manifest = ManifestBuilder::new("augment", cfg);
    manifest
        .input("corpus", &cfg.corpus_path)
        .map_err(io_err(&cfg.corpus_path))?;
    let generator = build_generator(&cfg.generator)?;
    let template = cfg.augment.template.as_deref().unwrap_or(DEFAULT_QA_PROMPT);
    let summaries: Vec<&Document> = corpus.documents().iter().filter(|d| d.is_summary).collect();

    let outcomes = parallel_map(&summaries, generator.max_concurrency(), |d| {
        generate_qa_pairs(&generator, d, template, cfg.augment.filter)
    });
    let mut pairs: Vec<QAPair> = Vec::new();
    let mut flat = String::new();
    let mut failures = Vec::new();
    for (doc, outcome) in summaries.iter().zip(outcomes) {
        match outcome {
            Ok(ps) => {
                if cfg.augment.flattened && !ps.is_empty() {
                    match flatten_qa_pairs(&ps) {
                        Ok(line) => {
                            flat.push_str(&line);
                            flat.push('\n');
                        }
                        Err(e) => failures.push((doc.doc_id.clone(), format!("flatten: {e}"))),
                    }
                }
                pairs.extend(ps);
            }
            Err(e) => failures.push((doc.doc_id.clone(), e.to_string())),
        }
    }
    if !failures.is_empty() {
        log::warn!("{} of {} documents failed", failures.len(), summaries.len());
        for (doc, e) in &failures {
            log::warn!("  {doc}: {e}");
        }
    }
    let path = cfg.output_dir.join(QA_FILE);
    manifest.emit(&path, &jsonl(&pairs)).map_err(io_err(&path))?;
    let flattened_path = if cfg.augment.flattened {
        let p = cfg.output_dir.join(QA_FLAT_FILE);
        manifest.emit(&p, flat.as_bytes()).map_err(io_err(&p))?;
        Some(p)
    } else {
        None
    };
    Ok(AugmentSummary {
        documents: summaries.len(),
        pairs: pairs.len(),
        failures,
        path,
        flattened_path,
    })
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub runs: Vec<EvalReport>,
    pub significance: Vec<SignificanceRow>,
}

/// Parses `label=path`; a bare path is labelled by itself.
pub fn parse_run_arg(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((label, path)) if !label.is_empty() => (label.to_owned(), PathBuf::from(path)),
        _ => (arg.to_owned(), PathBuf::from(arg)),
    }
}

/// Aggregates result files. With no runs given, evaluates this config's own
/// results file under its variant's name.
pub fn cmd_evaluate(cfg: &RunConfig, runs: &[(String, PathBuf)]) -> Result<ReportFile, CommandError> {
    cfg.validate()?;
    let default_run = [(cfg.variant.to_string(), cfg.output_dir.join(RESULTS_FILE))];
    let runs = if runs.is_empty() { &default_run[..] } else { runs };
    let mut labels = BTreeSet::new();
    for (label, _) in runs {
        if !labels.insert(label.as_str()) {
            return Err(CommandError::Data(format!("run label {label:?} given twice")));
        }
    }

    let corpus = load_corpus(&cfg.corpus_path)?;
    let dataset = load_dataset(&cfg.dataset_path)?;
    let dataset_hash = sha256_file(&cfg.dataset_path).map_err(io_err(&cfg.dataset_path))?;
    let mut manifest = ManifestBuilder::new("evaluate", cfg);
    manifest.input_hash("dataset", dataset_hash.clone());

    let mut loaded = Vec::with_capacity(runs.len());
    for (label, path) in runs {
        let path = require(path.clone(), "results file", "generate")?;
        let m = RunManifest::read_for(&path)
            .map_err(io_err(&path))?
            .ok_or_else(|| CommandError::Data(format!("{} has no manifest", path.display())))?;
        match m.inputs.get("dataset") {
            Some(h) if *h == dataset_hash => {}
            _ => {
                return Err(CommandError::Data(format!(
                    "run {label:?} was produced from a different dataset than {}",
                    cfg.dataset_path.display()
                )))
            }
        }
        manifest
            .input(&format!("results:{label}"), &path)
            .map_err(io_err(&path))?;
        loaded.push((label.clone(), load_results(&path)?));
    }

    let gold_docs: BTreeMap<String, String> = dataset
        .iter()
        .filter_map(|q| {
            corpus
                .summary_index()
                .get(&q.entity_id)
                .map(|d| (q.qa_id.clone(), d.clone()))
        })
        .collect();
    let reports: Vec<EvalReport> = loaded
        .iter()
        .map(|(label, rs)| build_report(label, rs, &gold_docs, &cfg.eval.recall_ks))
        .collect();

    let pairs: Vec<(usize, usize)> = if cfg.eval.significance.is_empty() {
        (0..loaded.len())
            .flat_map(|i| (i + 1..loaded.len()).map(move |j| (i, j)))
            .collect()
    } else {
        let find = |l: &str| {
            loaded
                .iter()
                .position(|(label, _)| label == l)
                .ok_or_else(|| CommandError::Data(format!("significance pair names unknown run {l:?}")))
        };
        cfg.eval
            .significance
            .iter()
            .map(|[a, b]| Ok((find(a)?, find(b)?)))
            .collect::<Result<_, CommandError>>()?
    };
    let mut significance = Vec::new();
    for (i, j) in pairs {
        let (la, ra) = (&loaded[i].0, &loaded[i].1);
        let (lb, rb) = (&loaded[j].0, &loaded[j].1);
        significance.extend(compare_runs(la, ra, lb, rb)?);
    }

    let report = ReportFile {
        runs: reports,
        significance,
    };
    let json_path = cfg.output_dir.join(REPORT_JSON);
    let mut json = serde_json::to_vec_pretty(&report).expect("in-memory serialization");
    json.push(b'\n');
    manifest.emit(&json_path, &json).map_err(io_err(&json_path))?;
    let text_path = cfg.output_dir.join(REPORT_TEXT);
    manifest
        .emit(&text_path, render_text(&report.runs, &report.significance).as_bytes())
        .map_err(io_err(&text_path))?;
    Ok(report)
}

/// Re-renders the text table of a `report.json`.
pub fn cmd_report(path: &Path) -> Result<String, CommandError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let report: ReportFile =
        serde_json::from_str(&text).map_err(|e| CommandError::Data(format!("{}: {e}", path.display())))?;
    Ok(render_text(&report.runs, &report.significance))
}
