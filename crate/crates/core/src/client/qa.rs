//! Synthetic QA-pair generation and the flattened pair serialization.
//!
//! Flattened form: `question: {q}, answer: {a}` per pair, pairs joined by
//! `" | "`. Fields may not contain `|`, may not be empty, and a question
//! may not contain `", answer: "`; within that domain flattening and
//! parsing are exact inverses.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ClientError, Generator};
use crate::corpus::Document;
use crate::eval::normalize_for_match;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub question: String,
    pub answer: String,
    pub source_doc_id: String,
}

#[derive(Debug, Error)]
pub enum QaError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("no parseable QA pairs for document {0:?}")]
    NoPairs(String),
    #[error("document {0:?} has empty text")]
    EmptyDocument(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FlattenError {
    #[error("nothing to flatten")]
    Empty,
    #[error("pair {index}: {field} contains the separator '|'")]
    Separator { index: usize, field: &'static str },
    #[error("pair {index}: {field} is empty")]
    EmptyField { index: usize, field: &'static str },
    #[error("pair {index}: question contains \", answer: \"")]
    Ambiguous { index: usize },
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("byte {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

pub const PAIR_SEPARATOR: &str = " | ";
const QUESTION_TAG: &str = "question: ";
const ANSWER_TAG: &str = ", answer: ";

/// Placeholder replaced by the document text in QA-generation templates.
pub const DOCUMENT_PLACEHOLDER: &str = "{document}";

/// Chain-of-thought QA-generation prompt. The model is asked to finish
/// with `Q:` / `A:` line pairs, which [`parse_qa_output`] reads.
pub const DEFAULT_QA_PROMPT: &str = "\
Read the passage below and write as many factual question-answer pairs about it as you can.
Work step by step:
1. List every entity mentioned in the passage.
2. For each entity, list the facts the passage states about it.
3. Turn each fact into a question that can be answered from the passage alone. The answer must be a short span copied exactly from the passage.
4. Write the final pairs, each as two lines:
Q: <question>
A: <answer>

Passage: {document}";

pub fn textualize(question: &str, answer: &str) -> String {
    format!("{QUESTION_TAG}{question}{ANSWER_TAG}{answer}")
}

pub fn flatten_qa_pairs(pairs: &[QAPair]) -> Result<String, FlattenError> {
    if pairs.is_empty() {
        return Err(FlattenError::Empty);
    }
    let mut parts = Vec::with_capacity(pairs.len());
    for (index, p) in pairs.iter().enumerate() {
        for (field, value) in [("question", &p.question), ("answer", &p.answer)] {
            if value.is_empty() {
                return Err(FlattenError::EmptyField { index, field });
            }
            if value.contains('|') {
                return Err(FlattenError::Separator { index, field });
            }
        }
        if p.question.contains(ANSWER_TAG) {
            return Err(FlattenError::Ambiguous { index });
        }
        parts.push(textualize(&p.question, &p.answer));
    }
    Ok(parts.join(PAIR_SEPARATOR))
}

/// Inverse of [`flatten_qa_pairs`]. Parsed pairs have an empty `source_doc_id`.
pub fn parse_flattened(text: &str) -> Result<Vec<QAPair>, ParseError> {
    let err = |position: usize, message: &str| ParseError {
        position,
        message: message.to_owned(),
    };
    if text.is_empty() {
        return Err(err(0, "empty input"));
    }
    let segments: Vec<&str> = text.split('|').collect();
    let last = segments.len() - 1;
    let mut offset = 0;
    let mut pairs = Vec::with_capacity(segments.len());
    for (i, raw) in segments.iter().enumerate() {
        let mut seg = *raw;
        let mut start = offset;
        if i > 0 {
            seg = seg
                .strip_prefix(' ')
                .ok_or_else(|| err(start, "expected a space after '|'"))?;
            start += 1;
        }
        if i < last {
            seg = seg
                .strip_suffix(' ')
                .ok_or_else(|| err(offset + raw.len(), "expected a space before '|'"))?;
        }
        let body = seg
            .strip_prefix(QUESTION_TAG)
            .ok_or_else(|| err(start, "expected \"question: \""))?;
        let cut = body
            .find(ANSWER_TAG)
            .ok_or_else(|| err(start + QUESTION_TAG.len(), "missing \", answer: \""))?;
        let (question, answer) = (&body[..cut], &body[cut + ANSWER_TAG.len()..]);
        if question.is_empty() {
            return Err(err(start + QUESTION_TAG.len(), "empty question"));
        }
        if answer.is_empty() {
            return Err(err(start + QUESTION_TAG.len() + cut + ANSWER_TAG.len(), "empty answer"));
        }
        pairs.push(QAPair {
            question: question.to_owned(),
            answer: answer.to_owned(),
            source_doc_id: String::new(),
        });
        offset += raw.len() + 1;
    }
    Ok(pairs)
}

fn strip_list_marker(line: &str) -> &str {
    let line = line.trim_start_matches(['-', '*', ' ']);
    let digits = line.len() - line.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(r) = rest.strip_prefix(['.', ')']) {
            return r.trim_start();
        }
    }
    line
}

/// Reads `Q: ...` / `A: ...` line pairs from model output. A `Q:` line
/// without a following `A:` is discarded; other lines are ignored.
pub fn parse_qa_output(text: &str, source_doc_id: &str) -> Vec<QAPair> {
    let mut pairs = Vec::new();
    let mut pending: Option<String> = None;
    for line in text.lines() {
        let line = strip_list_marker(line.trim());
        if let Some(q) = line.strip_prefix("Q:") {
            let q = q.trim();
            pending = (!q.is_empty()).then(|| q.to_owned());
        } else if let Some(a) = line.strip_prefix("A:") {
            let a = a.trim();
            if let Some(q) = pending.take() {
                if !a.is_empty() {
                    pairs.push(QAPair {
                        question: q,
                        answer: a.to_owned(),
                        source_doc_id: source_doc_id.to_owned(),
                    });
                }
            }
        }
    }
    pairs
}

/// Keeps pairs whose answer occurs in `doc` (case- and whitespace-insensitive).
pub fn consistency_filter(pairs: Vec<QAPair>, doc: &Document) -> Vec<QAPair> {
    let text = normalize_for_match(&doc.text);
    pairs
        .into_iter()
        .filter(|p| text.contains(&normalize_for_match(&p.answer)))
        .collect()
}

pub fn render_qa_prompt(template: &str, doc: &Document) -> String {
    if template.contains(DOCUMENT_PLACEHOLDER) {
        template.replace(DOCUMENT_PLACEHOLDER, &doc.text)
    } else {
        format!("{template}\n\n{}", doc.text)
    }
}

/// Prompts the generator with `template` over `doc` and parses the pairs.
pub fn generate_qa_pairs(
    generator: &Generator,
    doc: &Document,
    template: &str,
    filter: bool,
) -> Result<Vec<QAPair>, QaError> {
    if doc.text.trim().is_empty() {
        return Err(QaError::EmptyDocument(doc.doc_id.clone()));
    }
    let out = generator.generate_answer(&render_qa_prompt(template, doc))?;
    let pairs = parse_qa_output(&out.output_text, &doc.doc_id);
    if pairs.is_empty() {
        return Err(QaError::NoPairs(doc.doc_id.clone()));
    }
    if !filter {
        return Ok(pairs);
    }
    let parsed = pairs.len();
    let kept = consistency_filter(pairs, doc);
    if kept.len() < parsed {
        log::debug!(
            "{}: dropped {} of {parsed} pairs not grounded in the document",
            doc.doc_id,
            parsed - kept.len()
        );
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::mock::{EchoBackend, FixedBackend};
    use crate::client::RetryPolicy;
    use proptest::prelude::*;

    fn pair(q: &str, a: &str) -> QAPair {
        QAPair {
            question: q.into(),
            answer: a.into(),
            source_doc_id: String::new(),
        }
    }

    fn generator(output: &str) -> Generator {
        Generator::new(Box::new(FixedBackend::new(output)), RetryPolicy::immediate(0), 1)
    }

    fn doc() -> Document {
        Document::new("d1", "", "Lisa Miller was born in Paris. She is a painter.", None, true).unwrap()
    }

    #[test]
    fn flatten_examples() {
        assert_eq!(
            flatten_qa_pairs(&[pair("Who is X?", "Y")]).unwrap(),
            "question: Who is X?, answer: Y"
        );
        assert_eq!(
            flatten_qa_pairs(&[pair("Who is X?", "Y"), pair("Where?", "Paris")]).unwrap(),
            "question: Who is X?, answer: Y | question: Where?, answer: Paris"
        );
    }

    #[test]
    fn flatten_rejects_invalid_fields() {
        assert_eq!(flatten_qa_pairs(&[]), Err(FlattenError::Empty));
        assert_eq!(
            flatten_qa_pairs(&[pair("a|b", "c")]),
            Err(FlattenError::Separator {
                index: 0,
                field: "question"
            })
        );
        assert_eq!(
            flatten_qa_pairs(&[pair("a", "")]),
            Err(FlattenError::EmptyField {
                index: 0,
                field: "answer"
            })
        );
        assert_eq!(
            flatten_qa_pairs(&[pair("x, answer: y", "z")]),
            Err(FlattenError::Ambiguous { index: 0 })
        );
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_flattened("question: A?, answer: B").unwrap(), [pair("A?", "B")]);
        let e = parse_flattened("question: A?").unwrap_err();
        assert_eq!(e.position, 10);
        assert!(parse_flattened("").is_err());
        assert!(parse_flattened("question: A?, answer: B |question: C, answer: D").is_err());
        assert!(parse_flattened("q: A?, answer: B").is_err());
    }

    fn field() -> impl Strategy<Value = String> {
        "[A-Za-z0-9 ?.,:'-]{1,24}".prop_filter("no answer tag", |s| !s.contains(ANSWER_TAG))
    }

    proptest! {
        #[test]
        fn flatten_parse_round_trip(raw in prop::collection::vec((field(), field()), 1..8)) {
            let pairs: Vec<QAPair> = raw.iter().map(|(q, a)| pair(q, a)).collect();
            let flat = flatten_qa_pairs(&pairs).unwrap();
            prop_assert_eq!(parse_flattened(&flat).unwrap(), pairs);
        }
    }

    #[test]
    fn qa_generation_parses_lines() {
        let g = generator(
            "Step 1: entities...\nQ: Where was Lisa Miller born?\nA: Paris\n2. Q: What is her job?\nA: painter\n",
        );
        let pairs = generate_qa_pairs(&g, &doc(), DEFAULT_QA_PROMPT, true).unwrap();
        assert_eq!(pairs.len(), 2);
        assert!(pairs.iter().all(|p| p.source_doc_id == "d1"));
        assert_eq!(pairs[1].answer, "painter");
    }

    #[test]
    fn malformed_output_signals_no_pairs() {
        let g = generator("I could not think of anything.");
        assert!(matches!(
            generate_qa_pairs(&g, &doc(), DEFAULT_QA_PROMPT, true),
            Err(QaError::NoPairs(id)) if id == "d1"
        ));
    }

    #[test]
    fn filter_drops_ungrounded_answers() {
        let g = generator("Q: Where was she born?\nA: London\nQ: Where was Lisa born?\nA: paris");
        let kept = generate_qa_pairs(&g, &doc(), DEFAULT_QA_PROMPT, true).unwrap();
        assert_eq!(
            kept,
            [QAPair {
                question: "Where was Lisa born?".into(),
                answer: "paris".into(),
                source_doc_id: "d1".into()
            }]
        );
        let all = generate_qa_pairs(&g, &doc(), DEFAULT_QA_PROMPT, false).unwrap();
        assert_eq!(all.len(), 2);
    }

    #[test]
    fn template_substitutes_document() {
        let g = Generator::new(Box::new(EchoBackend), RetryPolicy::immediate(0), 1);
        let out = g
            .generate_answer(&render_qa_prompt("Text: {document}", &doc()))
            .unwrap();
        assert_eq!(out.output_text, format!("Text: {}", doc().text));
    }
}
