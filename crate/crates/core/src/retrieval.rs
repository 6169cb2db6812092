//! Document retrieval: BM25 over an inverted index, exact dense
//! dot-product search, BM25→dense two-stage reranking and the Ideal
//! (summary-document oracle) retriever.
//!
//! Every backend produces a [`RankedList`] ordered by score descending with
//! ties broken by doc id ascending, so results never depend on corpus order.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("unknown document {0:?}")]
    UnknownDocument(String),
    #[error("query vector has dimension {got}, index expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("candidate {0:?} has no dense vector")]
    MissingVector(String),
    #[error("vector for {doc_id:?}: {message}")]
    BadVector { doc_id: String, message: String },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("{retriever} retriever needs {what}")]
    MissingInput {
        retriever: &'static str,
        what: &'static str,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

/// Ranked retrieval result for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<ScoredDoc>,
    pub k_requested: usize,
}

/// Score descending, then doc id ascending.
pub fn rank_order(a: &ScoredDoc, b: &ScoredDoc) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id))
}

impl RankedList {
    /// Sorts `scored` under the ranking order and keeps the first `k`.
    /// Duplicate ids keep their best-ranked entry.
    pub fn from_scores(query_id: impl Into<String>, scored: impl IntoIterator<Item = ScoredDoc>, k: usize) -> Self {
        let mut entries: Vec<ScoredDoc> = scored.into_iter().collect();
        entries.sort_by(rank_order);
        let mut seen = std::collections::HashSet::new();
        entries.retain(|e| seen.insert(e.doc_id.clone()));
        entries.truncate(k);
        RankedList {
            query_id: query_id.into(),
            entries,
            k_requested: k,
        }
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posting {
    pub doc_id: String,
    pub tf: u32,
}

/// Inverted index for BM25.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseIndex {
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: BTreeMap<String, u32>,
    avg_doc_length: f64,
    #[serde(default)]
    params: Bm25Params,
}

impl SparseIndex {
    pub fn build(corpus: &Corpus) -> Self {
        Self::from_texts(corpus.documents().iter().map(|d| (d.doc_id.as_str(), d.text.as_str())))
    }

    /// Indexes arbitrary `(id, text)` pairs. Later duplicates of an id are ignored.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = BTreeMap::new();
        for (doc_id, text) in texts {
            if doc_lengths.contains_key(doc_id) {
                continue;
            }
            let tokens = tokenize(text);
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for t in &tokens {
                *counts.entry(t.clone()).or_default() += 1;
            }
            for (term, tf) in counts {
                postings.entry(term).or_default().push(Posting {
                    doc_id: doc_id.to_owned(),
                    tf,
                });
            }
            doc_lengths.insert(doc_id.to_owned(), tokens.len() as u32);
        }
        for list in postings.values_mut() {
            list.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        }
        let total: u64 = doc_lengths.values().map(|&l| u64::from(l)).sum();
        let avg_doc_length = if doc_lengths.is_empty() {
            0.0
        } else {
            total as f64 / doc_lengths.len() as f64
        };
        SparseIndex {
            postings,
            doc_lengths,
            avg_doc_length,
            params: Bm25Params::default(),
        }
    }

    pub fn with_params(mut self, params: Bm25Params) -> Self {
        self.params = params;
        self
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<u32> {
        self.doc_lengths.get(doc_id).copied()
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.doc_lengths.keys().map(String::as_str)
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.doc_count() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, tf: u32, doc_len: u32, df: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = f64::from(tf);
        let norm = if self.avg_doc_length > 0.0 {
            f64::from(doc_len) / self.avg_doc_length
        } else {
            0.0
        };
        self.idf(df) * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm))
    }

    /// BM25 score of one document. Repeated query terms count once each time
    /// they occur in the query.
    pub fn score(&self, query_terms: &[String], doc_id: &str) -> Result<f64, RetrievalError> {
        let doc_len = self
            .doc_length(doc_id)
            .ok_or_else(|| RetrievalError::UnknownDocument(doc_id.to_owned()))?;
        let mut score = 0.0;
        for term in query_terms {
            let list = self.postings(term);
            if let Ok(pos) = list.binary_search_by(|p| p.doc_id.as_str().cmp(doc_id)) {
                score += self.term_weight(list[pos].tf, doc_len, list.len());
            }
        }
        Ok(score)
    }

    /// All documents with a positive score, ranked, truncated to `k`.
    pub fn search(&self, query_id: &str, query: &str, k: usize) -> RankedList {
        let terms = tokenize(query);
        let mut acc: HashMap<&str, f64> = HashMap::new();
        for term in &terms {
            let list = self.postings(term);
            for p in list {
                let len = self.doc_lengths[&p.doc_id];
                *acc.entry(p.doc_id.as_str()).or_default() += self.term_weight(p.tf, len, list.len());
            }
        }
        RankedList::from_scores(
            query_id,
            acc.into_iter()
                .filter(|&(_, s)| s > 0.0)
                .map(|(doc_id, score)| ScoredDoc {
                    doc_id: doc_id.to_owned(),
                    score,
                }),
            k,
        )
    }
}

/// Dense vectors keyed by doc id, all of one dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DenseIndex {
    vectors: BTreeMap<String, Vec<f64>>,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct VectorRecord {
    id: String,
    vector: Vec<f64>,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl DenseIndex {
    pub fn new(dim: usize) -> Self {
        DenseIndex {
            vectors: BTreeMap::new(),
            dim,
        }
    }

    pub fn from_vectors(vectors: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<Self, RetrievalError> {
        let mut vectors = vectors.into_iter().peekable();
        let dim = vectors.peek().map_or(0, |(_, v)| v.len());
        let mut index = DenseIndex::new(dim);
        for (id, v) in vectors {
            index.insert(id, v)?;
        }
        Ok(index)
    }

    pub fn insert(&mut self, doc_id: String, vector: Vec<f64>) -> Result<(), RetrievalError> {
        if self.vectors.is_empty() && self.dim == 0 {
            self.dim = vector.len();
        }
        if vector.is_empty() {
            return Err(RetrievalError::BadVector {
                doc_id,
                message: "empty vector".into(),
            });
        }
        if vector.len() != self.dim {
            return Err(RetrievalError::BadVector {
                doc_id,
                message: format!("dimension {} != {}", vector.len(), self.dim),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(RetrievalError::BadVector {
                doc_id,
                message: "non-finite component".into(),
            });
        }
        self.vectors.insert(doc_id, vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&[f64]> {
        self.vectors.get(doc_id).map(Vec::as_slice)
    }

    fn check_dim(&self, query: &[f64]) -> Result<(), RetrievalError> {
        if query.len() != self.dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        Ok(())
    }

    /// Exact top-`k` by dot product.
    pub fn search(&self, query_id: &str, query: &[f64], k: usize) -> Result<RankedList, RetrievalError> {
        if self.is_empty() {
            return Ok(RankedList::from_scores(query_id, [], k));
        }
        self.check_dim(query)?;
        Ok(RankedList::from_scores(
            query_id,
            self.vectors.iter().map(|(id, v)| ScoredDoc {
                doc_id: id.clone(),
                score: dot(query, v),
            }),
            k,
        ))
    }

    /// Rescores `candidates` by dot product and keeps the top `k`.
    pub fn rerank(&self, candidates: &RankedList, query: &[f64], k: usize) -> Result<RankedList, RetrievalError> {
        if !candidates.is_empty() {
            self.check_dim(query)?;
        }
        let scored = candidates
            .entries
            .iter()
            .map(|c| {
                self.get(&c.doc_id)
                    .map(|v| ScoredDoc {
                        doc_id: c.doc_id.clone(),
                        score: dot(query, v),
                    })
                    .ok_or_else(|| RetrievalError::MissingVector(c.doc_id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RankedList::from_scores(candidates.query_id.clone(), scored, k))
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (id, vector) in &self.vectors {
            let rec = VectorRecord {
                id: id.clone(),
                vector: vector.clone(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, RetrievalError> {
        let mut index = DenseIndex::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: VectorRecord = serde_json::from_str(&line).map_err(|e| RetrievalError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
            index
                .insert(rec.id, rec.vector)
                .map_err(|e| RetrievalError::Malformed {
                    line: i + 1,
                    message: e.to_string(),
                })?;
        }
        Ok(index)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }
}

/// What a retriever may look at for one question.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub id: &'a str,
    pub text: &'a str,
    /// Query embedding, required by dense backends.
    pub vector: Option<&'a [f64]>,
    /// Subject entity, required by the Ideal retriever.
    pub entity_id: Option<&'a str>,
}

impl<'a> Query<'a> {
    pub fn text(id: &'a str, text: &'a str) -> Self {
        Query {
            id,
            text,
            vector: None,
            entity_id: None,
        }
    }
}

/// Ranks corpus documents for a query.
pub trait Retriever: Send + Sync {
    fn name(&self) -> &'static str;
    fn retrieve(&self, query: &Query<'_>, k: usize) -> Result<RankedList, RetrievalError>;
}

pub struct Bm25Retriever<'a> {
    pub index: &'a SparseIndex,
}

impl Retriever for Bm25Retriever<'_> {
    fn name(&self) -> &'static str {
        "bm25"
    }

    fn retrieve(&self, query: &Query<'_>, k: usize) -> Result<RankedList, RetrievalError> {
        Ok(self.index.search(query.id, query.text, k))
    }
}

pub struct DenseRetriever<'a> {
    pub index: &'a DenseIndex,
}

fn need_vector<'q>(query: &Query<'q>, retriever: &'static str) -> Result<&'q [f64], RetrievalError> {
    query.vector.ok_or(RetrievalError::MissingInput {
        retriever,
        what: "a query vector",
    })
}

impl Retriever for DenseRetriever<'_> {
    fn name(&self) -> &'static str {
        "dense"
    }

    fn retrieve(&self, query: &Query<'_>, k: usize) -> Result<RankedList, RetrievalError> {
        self.index.search(query.id, need_vector(query, "dense")?, k)
    }
}

pub const DEFAULT_RERANK_DEPTH: usize = 100;

/// BM25 candidates reordered by dense score.
pub struct TwoStageRetriever<'a> {
    pub sparse: &'a SparseIndex,
    pub dense: &'a DenseIndex,
    pub depth: usize,
}

impl Retriever for TwoStageRetriever<'_> {
    fn name(&self) -> &'static str {
        "bm25_dense_rerank"
    }

    fn retrieve(&self, query: &Query<'_>, k: usize) -> Result<RankedList, RetrievalError> {
        let vector = need_vector(query, "bm25_dense_rerank")?;
        let candidates = self.sparse.search(query.id, query.text, self.depth.max(k));
        self.dense.rerank(&candidates, vector, k)
    }
}

/// Rank 1 is the subject entity's summary document; the remaining ranks come
/// from `fallback` with the summary document removed.
pub struct IdealRetriever<'a> {
    pub corpus: &'a Corpus,
    pub fallback: Box<dyn Retriever + 'a>,
}

impl Retriever for IdealRetriever<'_> {
    fn name(&self) -> &'static str {
        "ideal"
    }

    fn retrieve(&self, query: &Query<'_>, k: usize) -> Result<RankedList, RetrievalError> {
        let entity = query.entity_id.ok_or(RetrievalError::MissingInput {
            retriever: "ideal",
            what: "an entity id",
        })?;
        ideal_retrieve(self.corpus, entity, query, k, self.fallback.as_ref())
    }
}

/// The Ideal oracle. The summary entry's score is one more than the best
/// fallback score (1.0 when there is none), so scores stay finite.
pub fn ideal_retrieve(
    corpus: &Corpus,
    entity_id: &str,
    query: &Query<'_>,
    k: usize,
    fallback: &dyn Retriever,
) -> Result<RankedList, RetrievalError> {
    let summary = corpus.summary_doc(entity_id)?;
    if k == 0 {
        return Ok(RankedList::from_scores(query.id, [], 0));
    }
    let rest: Vec<ScoredDoc> = if k > 1 {
        fallback
            .retrieve(query, k)?
            .entries
            .into_iter()
            .filter(|e| e.doc_id != summary.doc_id)
            .take(k - 1)
            .collect()
    } else {
        Vec::new()
    };
    let top = rest.first().map_or(1.0, |e| e.score + 1.0);
    let mut entries = Vec::with_capacity(rest.len() + 1);
    entries.push(ScoredDoc {
        doc_id: summary.doc_id.clone(),
        score: top,
    });
    entries.extend(rest);
    Ok(RankedList {
        query_id: query.id.to_owned(),
        entries,
        k_requested: k,
    })
}
