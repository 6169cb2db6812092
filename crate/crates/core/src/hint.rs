//! Hint-sentence extraction.
//!
//! The top-K retrieved documents are split into sentences, every sentence
//! is scored against the question, and the best one becomes the hint:
//! either the sentence itself ([`HintMode::Sentence`]) or the whole
//! document that contains it ([`HintMode::Document`]).

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{ClientError, Embedder};
use crate::corpus::{Document, Sentence};
use crate::retrieval::{dot, tokenize, Bm25Params, SparseIndex};

#[derive(Debug, Error)]
pub enum HintError {
    #[error("no documents to extract a hint from")]
    NoDocuments,
    #[error("document {0:?} has no sentences")]
    NoSentences(String),
    #[error("no sentences to score")]
    EmptyPool,
    #[error("sentence embedding failed: {0}")]
    Embedding(#[from] ClientError),
    #[error("embedder returned {got} vectors for {expected} texts")]
    EmbeddingShape { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HintMode {
    #[serde(rename = "S")]
    Sentence,
    #[serde(rename = "D")]
    Document,
}

impl fmt::Display for HintMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HintMode::Sentence => "S",
            HintMode::Document => "D",
        })
    }
}

impl FromStr for HintMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "S" | "s" | "sentence" => Ok(HintMode::Sentence),
            "D" | "d" | "document" => Ok(HintMode::Document),
            other => Err(format!("unknown hint mode {other:?} (expected S or D)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hint {
    pub mode: HintMode,
    pub sentence: Sentence,
    pub source_doc_id: String,
    pub hint_text: String,
    pub score: f64,
}

/// A sentence candidate with the retrieval rank of its document.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSentence {
    pub sentence: Sentence,
    pub doc_rank: usize,
    pub score: f64,
}

/// Scores a pool of sentences against a question, one score per sentence.
pub trait SentenceScorer: Send + Sync {
    fn score(&self, question: &str, sentences: &[Sentence]) -> Result<Vec<f64>, HintError>;
}

/// BM25 with the sentence pool as the collection.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bm25SentenceScorer {
    pub params: Bm25Params,
}

impl SentenceScorer for Bm25SentenceScorer {
    fn score(&self, question: &str, sentences: &[Sentence]) -> Result<Vec<f64>, HintError> {
        let keys: Vec<String> = (0..sentences.len()).map(|i| i.to_string()).collect();
        let index = SparseIndex::from_texts(keys.iter().zip(sentences).map(|(k, s)| (k.as_str(), s.text.as_str())))
            .with_params(self.params);
        let terms = tokenize(question);
        Ok(keys
            .iter()
            .map(|k| index.score(&terms, k).expect("key was indexed"))
            .collect())
    }
}

/// Dot product between question and sentence embeddings, computed per call.
pub struct DenseSentenceScorer<'a> {
    pub embedder: &'a dyn Embedder,
}

impl SentenceScorer for DenseSentenceScorer<'_> {
    fn score(&self, question: &str, sentences: &[Sentence]) -> Result<Vec<f64>, HintError> {
        let mut texts = Vec::with_capacity(sentences.len() + 1);
        texts.push(question.to_owned());
        texts.extend(sentences.iter().map(|s| s.text.clone()));
        let vectors = self.embedder.embed(&texts)?;
        if vectors.len() != texts.len() {
            return Err(HintError::EmbeddingShape {
                expected: texts.len(),
                got: vectors.len(),
            });
        }
        let (q, rest) = vectors.split_first().expect("non-empty");
        Ok(rest.iter().map(|v| dot(q, v)).collect())
    }
}

fn candidate_order(a: &ScoredSentence, b: &ScoredSentence) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.doc_rank.cmp(&b.doc_rank))
        .then(a.sentence.index.cmp(&b.sentence.index))
}

/// Scores and orders candidate sentences: score descending, then document
/// rank, then sentence position. `doc_ranks[i]` is the rank of the document
/// holding `sentences[i]`.
pub fn score_sentences(
    question: &str,
    sentences: Vec<Sentence>,
    doc_ranks: &[usize],
    scorer: &dyn SentenceScorer,
) -> Result<Vec<ScoredSentence>, HintError> {
    if sentences.is_empty() {
        return Err(HintError::EmptyPool);
    }
    let scores = scorer.score(question, &sentences)?;
    debug_assert_eq!(scores.len(), sentences.len());
    let mut ranked: Vec<ScoredSentence> = sentences
        .into_iter()
        .zip(scores)
        .zip(doc_ranks)
        .map(|((sentence, score), &doc_rank)| ScoredSentence {
            sentence,
            doc_rank,
            score,
        })
        .collect();
    ranked.sort_by(candidate_order);
    Ok(ranked)
}

/// Selects the hint from `top_docs`, given in retrieval rank order.
pub fn extract_hint(
    question: &str,
    top_docs: &[&Document],
    scorer: &dyn SentenceScorer,
    mode: HintMode,
) -> Result<Hint, HintError> {
    if top_docs.is_empty() {
        return Err(HintError::NoDocuments);
    }
    let mut pool = Vec::new();
    let mut ranks = Vec::new();
    for (rank, doc) in top_docs.iter().enumerate() {
        let sentences = doc.sentences();
        if sentences.is_empty() {
            return Err(HintError::NoSentences(doc.doc_id.clone()));
        }
        ranks.extend(std::iter::repeat_n(rank, sentences.len()));
        pool.extend(sentences);
    }
    let best = score_sentences(question, pool, &ranks, scorer)?
        .into_iter()
        .next()
        .expect("pool is non-empty");
    let source = top_docs[best.doc_rank];
    let hint_text = match mode {
        HintMode::Sentence => best.sentence.text.clone(),
        HintMode::Document => source.text.clone(),
    };
    Ok(Hint {
        mode,
        source_doc_id: source.doc_id.clone(),
        sentence: best.sentence,
        hint_text,
        score: best.score,
    })
}
