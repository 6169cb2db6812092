//! Zero-shot prompt templates.
//!
//! | variant | template                                       |
//! |---------|------------------------------------------------|
//! | no-RAG  | `Question: <question>`                         |
//! | RAG     | `Context: <context> Question: <question>`      |
//! | SRAG    | `Context: <hint><context> Question: <question>`|
//!
//! `<context>` is the context documents in rank order joined by the
//! separator; in SRAG the hint is followed by the same separator and then
//! the unchanged RAG context.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::hint::Hint;

pub const QUESTION_MARKER: &str = "Question: ";
pub const CONTEXT_MARKER: &str = "Context: ";
pub const DEFAULT_SEPARATOR: &str = " ";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("no-RAG prompts take no context documents")]
    UnexpectedContext,
    #[error("no-RAG and RAG prompts take no hint")]
    UnexpectedHint,
    #[error("SRAG prompts need a hint")]
    MissingHint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PromptVariant {
    NoRag,
    Rag,
    Srag,
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptVariant::NoRag => "NO_RAG",
            PromptVariant::Rag => "RAG",
            PromptVariant::Srag => "SRAG",
        })
    }
}

impl FromStr for PromptVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "NO_RAG" => Ok(PromptVariant::NoRag),
            "RAG" => Ok(PromptVariant::Rag),
            "SRAG" => Ok(PromptVariant::Srag),
            other => Err(format!("unknown prompt variant {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptOptions {
    pub separator: String,
    /// Prefix each context document with `"{title}: "`.
    pub include_titles: bool,
}

impl Default for PromptOptions {
    fn default() -> Self {
        PromptOptions {
            separator: DEFAULT_SEPARATOR.to_owned(),
            include_titles: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PromptSpec<'a> {
    pub variant: PromptVariant,
    pub context_docs: Vec<&'a Document>,
    pub hint: Option<&'a Hint>,
    pub question: &'a str,
}

impl PromptSpec<'_> {
    pub fn validate(&self) -> Result<(), PromptError> {
        match self.variant {
            PromptVariant::NoRag if !self.context_docs.is_empty() => Err(PromptError::UnexpectedContext),
            PromptVariant::NoRag | PromptVariant::Rag if self.hint.is_some() => Err(PromptError::UnexpectedHint),
            PromptVariant::Srag if self.hint.is_none() => Err(PromptError::MissingHint),
            _ => Ok(()),
        }
    }
}

fn render_doc(doc: &Document, opts: &PromptOptions) -> String {
    if opts.include_titles && !doc.title.is_empty() {
        format!("{}: {}", doc.title, doc.text)
    } else {
        doc.text.clone()
    }
}

pub fn build_prompt(spec: &PromptSpec<'_>, opts: &PromptOptions) -> Result<String, PromptError> {
    spec.validate()?;
    if spec.variant == PromptVariant::NoRag {
        return Ok(format!("{QUESTION_MARKER}{}", spec.question));
    }
    let mut parts: Vec<String> = Vec::with_capacity(spec.context_docs.len() + 1);
    if let Some(hint) = spec.hint {
        parts.push(hint.hint_text.clone());
    }
    parts.extend(spec.context_docs.iter().map(|d| render_doc(d, opts)));
    Ok(format!(
        "{CONTEXT_MARKER}{} {QUESTION_MARKER}{}",
        parts.join(&opts.separator),
        spec.question
    ))
}

/// Whitespace-delimited token count.
pub fn prompt_token_estimate(prompt: &str) -> usize {
    prompt.split_whitespace().count()
}

/// Splits a built prompt into `(context, question)`; context is `None`
/// for no-RAG prompts.
pub fn split_prompt(prompt: &str) -> (Option<&str>, &str) {
    let (head, question) = match prompt.rfind(QUESTION_MARKER) {
        Some(pos) => (&prompt[..pos], &prompt[pos + QUESTION_MARKER.len()..]),
        None => ("", prompt),
    };
    let context = head
        .strip_prefix(CONTEXT_MARKER)
        .map(|c| c.strip_suffix(' ').unwrap_or(c));
    (context, question)
}
