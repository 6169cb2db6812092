//! Retrieval-augmented QA over long-tail entities.
//!
//! - [`corpus`]: document loading and sentence segmentation
//! - [`retrieval`]: BM25, dense, two-stage and Ideal retrievers
//! - [`hint`]: hint-sentence extraction from the top-K documents
//! - [`prompt`]: zero-shot prompt templates
//! - [`client`]: model endpoints, mocks and synthetic QA generation
//! - [`eval`]: accuracy, Recall@K, popularity buckets, significance tests

pub mod client;
pub mod corpus;
pub mod eval;
pub mod hint;
pub mod prompt;
pub mod retrieval;

pub use corpus::{load_corpus, split_sentences, Corpus, Document, Sentence};
pub use hint::{extract_hint, Hint, HintMode};
pub use prompt::{build_prompt, PromptOptions, PromptSpec, PromptVariant};
pub use retrieval::{RankedList, Retriever, ScoredDoc};
