//! Document corpus: loading, validation, summary-document lookup and
//! sentence segmentation.
//!
//! Corpus files are JSON Lines, one document per line:
//!
//! ```text
//! {"id": "d1", "title": "Lisa Miller", "text": "...", "entity_id": "Q1", "is_summary": true}
//! ```
//!
//! Text is whitespace-normalized on load (runs of whitespace collapse to a
//! single space, ends trimmed).

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate document id {doc_id:?}")]
    DuplicateId { line: usize, doc_id: String },
    #[error("line {line}: entity {entity_id:?} already has summary document {existing:?}")]
    DuplicateSummary {
        line: usize,
        entity_id: String,
        existing: String,
    },
    #[error("unknown entity {0:?}")]
    UnknownEntity(String),
    #[error("entity {0:?} has no summary document")]
    NoSummary(String),
    #[error("invalid document {doc_id:?}: {message}")]
    InvalidDocument { doc_id: String, message: String },
}

/// One retrievable text unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "id")]
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
    #[serde(default)]
    pub entity_id: Option<String>,
    #[serde(default)]
    pub is_summary: bool,
}

impl Document {
    /// Builds a document with normalized text. Fails if the text is blank.
    pub fn new(
        doc_id: impl Into<String>,
        title: impl Into<String>,
        text: &str,
        entity_id: Option<&str>,
        is_summary: bool,
    ) -> Result<Self, CorpusError> {
        let doc = Document {
            doc_id: doc_id.into(),
            title: normalize_whitespace(&title.into()),
            text: normalize_whitespace(text),
            entity_id: entity_id.map(str::to_owned),
            is_summary,
        };
        if doc.text.is_empty() {
            return Err(CorpusError::InvalidDocument {
                doc_id: doc.doc_id,
                message: "text is empty".into(),
            });
        }
        Ok(doc)
    }

    /// Sentences of this document, tagged with its id.
    pub fn sentences(&self) -> Vec<Sentence> {
        split_sentences(&self.text)
            .into_iter()
            .enumerate()
            .map(|(index, text)| Sentence {
                text: text.to_owned(),
                doc_id: self.doc_id.clone(),
                index,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub doc_id: String,
    pub index: usize,
}

/// An immutable, validated set of documents.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    documents: Vec<Document>,
    by_id: HashMap<String, usize>,
    by_entity_summary: BTreeMap<String, String>,
    entities: BTreeMap<String, ()>,
}

impl Corpus {
    /// Builds a corpus, enforcing id uniqueness and one summary per entity.
    /// Errors carry the 1-based position of the offending document.
    pub fn from_documents(documents: Vec<Document>) -> Result<Self, CorpusError> {
        let mut corpus = Corpus::default();
        for (i, doc) in documents.into_iter().enumerate() {
            corpus.push(doc, i + 1)?;
        }
        Ok(corpus)
    }

    fn push(&mut self, mut doc: Document, line: usize) -> Result<(), CorpusError> {
        doc.text = normalize_whitespace(&doc.text);
        doc.title = normalize_whitespace(&doc.title);
        if doc.doc_id.is_empty() {
            return Err(CorpusError::Malformed {
                line,
                message: "empty id".into(),
            });
        }
        if doc.text.is_empty() {
            return Err(CorpusError::Malformed {
                line,
                message: format!("document {:?} has empty text", doc.doc_id),
            });
        }
        if self.by_id.contains_key(&doc.doc_id) {
            return Err(CorpusError::DuplicateId {
                line,
                doc_id: doc.doc_id,
            });
        }
        if let Some(entity) = &doc.entity_id {
            self.entities.insert(entity.clone(), ());
            if doc.is_summary {
                if let Some(existing) = self.by_entity_summary.get(entity) {
                    return Err(CorpusError::DuplicateSummary {
                        line,
                        entity_id: entity.clone(),
                        existing: existing.clone(),
                    });
                }
                self.by_entity_summary.insert(entity.clone(), doc.doc_id.clone());
            }
        }
        self.by_id.insert(doc.doc_id.clone(), self.documents.len());
        self.documents.push(doc);
        Ok(())
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.documents[i])
    }

    /// entity id → summary doc id, for every summary document.
    pub fn summary_index(&self) -> &BTreeMap<String, String> {
        &self.by_entity_summary
    }

    /// The summary document of `entity_id`.
    pub fn summary_doc(&self, entity_id: &str) -> Result<&Document, CorpusError> {
        match self.by_entity_summary.get(entity_id) {
            Some(doc_id) => Ok(self.get(doc_id).expect("summary index points at a document")),
            None if self.entities.contains_key(entity_id) => Err(CorpusError::NoSummary(entity_id.to_owned())),
            None => Err(CorpusError::UnknownEntity(entity_id.to_owned())),
        }
    }

    /// Writes the corpus back out in the JSON Lines format `load_corpus` reads.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for doc in &self.documents {
            serde_json::to_writer(&mut out, doc)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Loads a JSON Lines corpus. Blank lines are skipped; document order is kept.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_owned(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    read_corpus(BufReader::new(file)).map_err(|e| match e {
        CorpusError::Io { source, .. } => io_err(source),
        other => other,
    })
}

/// Reads a JSON Lines corpus from any buffered reader.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Corpus, CorpusError> {
    let mut corpus = Corpus::default();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: PathBuf::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: lineno,
            message: e.to_string(),
        })?;
        corpus.push(doc, lineno)?;
    }
    Ok(corpus)
}

/// Collapses whitespace runs to one space and trims both ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Tokens ending in '.' that never terminate a sentence. Compared
/// case-insensitively, including the trailing period.
pub const ABBREVIATIONS: &[&str] = &[
    "mr.", "mrs.", "ms.", "dr.", "prof.", "sr.", "jr.", "st.", "mt.", "ft.", "gen.", "col.", "lt.", "sgt.", "capt.",
    "gov.", "sen.", "rep.", "rev.", "hon.", "etc.", "vs.", "e.g.", "i.e.", "cf.", "no.", "vol.", "approx.", "inc.",
    "ltd.", "co.", "corp.", "jan.", "feb.", "mar.", "apr.", "jun.", "jul.", "aug.", "sep.", "sept.", "oct.", "nov.",
    "dec.", "u.s.", "u.k.",
];

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

fn is_opener(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '\u{201c}' | '\u{2018}')
}

/// Splits text into sentences.
///
/// A boundary is a run of `.`, `!` or `?` (optionally followed by closing
/// quotes or brackets), then whitespace, then an uppercase letter or digit
/// (optionally behind an opening quote or bracket). A single `.` ending a
/// token from [`ABBREVIATIONS`] is not a boundary. Returned slices are
/// trimmed, non-empty and borrow from `text`.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (_, c) = chars[i];
        if !is_terminal(c) {
            i += 1;
            continue;
        }
        let punct_start = i;
        let mut j = i;
        while j < chars.len() && is_terminal(chars[j].1) {
            j += 1;
        }
        let run_len = j - punct_start;
        while j < chars.len() && is_closer(chars[j].1) {
            j += 1;
        }
        let end_byte = chars.get(j).map_or(text.len(), |&(b, _)| b);
        let mut k = j;
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        if k == j || k == chars.len() {
            i = j.max(i + 1);
            continue;
        }
        let mut n = k;
        while n < chars.len() && is_opener(chars[n].1) {
            n += 1;
        }
        let starts_sentence = chars
            .get(n)
            .is_some_and(|&(_, c)| c.is_uppercase() || c.is_ascii_digit());
        let abbreviated = run_len == 1 && c == '.' && ends_with_abbreviation(&text[start..end_byte]);
        if starts_sentence && !abbreviated {
            push_trimmed(&mut out, &text[start..end_byte]);
            start = chars[k].0;
        }
        i = k;
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed<'a>(out: &mut Vec<&'a str>, s: &'a str) {
    let s = s.trim();
    if !s.is_empty() {
        out.push(s);
    }
}

fn ends_with_abbreviation(segment: &str) -> bool {
    let last = segment
        .trim_end_matches(is_closer)
        .rsplit(char::is_whitespace)
        .next()
        .unwrap_or("");
    let last = last.trim_start_matches(is_opener).to_lowercase();
    ABBREVIATIONS.contains(&last.as_str())
}
