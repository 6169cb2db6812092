//! Accuracy, Recall@K, popularity buckets, per-bucket reports and paired
//! significance tests between runs.

pub mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hint::{Hint, HintMode};
use crate::retrieval::RankedList;
pub use stats::{paired_t_test, wilcoxon_signed_rank, StatsError, TTestResult, WilcoxonResult};

/// Significance level used to flag differences.
pub const ALPHA: f64 = 0.01;
pub const BUCKETS: usize = 5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("bucket edges must be 4 finite, strictly ascending values: {0:?}")]
    MalformedEdges(Vec<f64>),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate qa id {0:?}")]
    DuplicateId(String),
    #[error("runs cover different questions ({only_left} only in the first, {only_right} only in the second)")]
    MismatchedRuns { only_left: usize, only_right: usize },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A factual question about one subject entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAInstance {
    #[serde(rename = "id")]
    pub qa_id: String,
    pub question: String,
    #[serde(rename = "answers")]
    pub gold_answers: Vec<String>,
    pub entity_id: String,
    pub pageviews: u64,
    #[serde(default)]
    pub relation: String,
}

/// Reads a JSON Lines QA dataset, rejecting empty answer lists and duplicate ids.
pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<QAInstance>, EvalError> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: QAInstance = serde_json::from_str(&line).map_err(|e| EvalError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        if inst.gold_answers.iter().all(|a| a.trim().is_empty()) {
            return Err(EvalError::Malformed {
                line: i + 1,
                message: format!("{:?} has no gold answers", inst.qa_id),
            });
        }
        if !seen.insert(inst.qa_id.clone()) {
            return Err(EvalError::DuplicateId(inst.qa_id));
        }
        out.push(inst);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<QAInstance>, EvalError> {
    read_dataset(BufReader::new(File::open(path)?))
}

/// Lowercases and collapses whitespace.
pub fn normalize_for_match(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// True iff some normalized gold answer is a substring of the normalized
/// prediction. This is deliberately lenient: a prediction that lists
/// several candidates counts as correct if any of them is the gold answer,
/// and a partial answer ("Nathanson" for "Jeff Nathanson") does not.
pub fn is_correct(prediction: &str, gold_answers: &[String]) -> bool {
    let pred = normalize_for_match(prediction);
    gold_answers
        .iter()
        .map(|g| normalize_for_match(g))
        .any(|g| !g.is_empty() && pred.contains(&g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HintSummary {
    pub mode: HintMode,
    pub source_doc_id: String,
    pub sentence_index: usize,
    pub sentence: String,
}

impl From<&Hint> for HintSummary {
    fn from(h: &Hint) -> Self {
        HintSummary {
            mode: h.mode,
            source_doc_id: h.source_doc_id.clone(),
            sentence_index: h.sentence.index,
            sentence: h.sentence.text.clone(),
        }
    }
}

/// Outcome for one question in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub qa_id: String,
    pub prediction: String,
    pub correct: bool,
    pub bucket: u8,
    #[serde(default)]
    pub retrieved_doc_ids: Vec<String>,
    #[serde(default)]
    pub hint_used: Option<HintSummary>,
    /// Set when generation failed; such rows always count as incorrect.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn read_results<R: BufRead>(reader: R) -> Result<Vec<InstanceResult>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: InstanceResult = serde_json::from_str(&line).map_err(|e| EvalError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        if usize::from(r.bucket) >= BUCKETS {
            return Err(EvalError::Malformed {
                line: i + 1,
                message: format!("bucket {} out of range", r.bucket),
            });
        }
        out.push(r);
    }
    Ok(out)
}

pub fn load_results(path: impl AsRef<Path>) -> Result<Vec<InstanceResult>, EvalError> {
    read_results(BufReader::new(File::open(path)?))
}

/// Fraction of correct results; 0 for an empty slice.
pub fn accuracy(results: &[InstanceResult]) -> f64 {
    if results.is_empty() {
        log::warn!("accuracy of an empty result set reported as 0");
        return 0.0;
    }
    results.iter().filter(|r| r.correct).count() as f64 / results.len() as f64
}

/// 1 iff `gold_doc_id` is among the first `k` entries.
pub fn recall_at_k(ranked: &RankedList, gold_doc_id: &str, k: usize) -> u8 {
    hit_at_k(ranked.doc_ids(), gold_doc_id, k)
}

fn hit_at_k<'a>(ids: impl Iterator<Item = &'a str>, gold: &str, k: usize) -> u8 {
    u8::from(ids.take(k).any(|d| d == gold))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogBase {
    #[serde(rename = "10")]
    Ten,
    #[serde(rename = "2")]
    Two,
}

impl LogBase {
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Ten => x.log10(),
            LogBase::Two => x.log2(),
        }
    }

    pub fn default_edges(self) -> BucketEdges {
        match self {
            LogBase::Ten => BucketEdges([2.0, 3.0, 4.0, 5.0]),
            LogBase::Two => BucketEdges([6.0, 8.0, 10.0, 12.0]),
        }
    }
}

impl FromStr for LogBase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "10" => Ok(LogBase::Ten),
            "2" => Ok(LogBase::Two),
            other => Err(format!("unsupported log base {other:?} (expected 10 or 2)")),
        }
    }
}

impl fmt::Display for LogBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogBase::Ten => "10",
            LogBase::Two => "2",
        })
    }
}

/// Four ascending cut points on the log-pageview axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketEdges(pub [f64; 4]);

impl BucketEdges {
    pub fn new(edges: &[f64]) -> Result<Self, EvalError> {
        let arr: [f64; 4] = edges
            .try_into()
            .map_err(|_| EvalError::MalformedEdges(edges.to_vec()))?;
        let e = BucketEdges(arr);
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let ok = self.0.iter().all(|x| x.is_finite()) && self.0.windows(2).all(|w| w[0] < w[1]);
        if ok {
            Ok(())
        } else {
            Err(EvalError::MalformedEdges(self.0.to_vec()))
        }
    }
}

/// Popularity bucket 0..=4: the number of edges strictly below
/// log(pageviews). Zero pageviews land in bucket 0.
pub fn assign_bucket(pageviews: u64, base: LogBase, edges: &BucketEdges) -> Result<u8, EvalError> {
    edges.validate()?;
    if pageviews == 0 {
        return Ok(0);
    }
    let x = base.log(pageviews as f64);
    Ok(edges.0.iter().filter(|&&e| e < x).count() as u8)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStat {
    pub bucket: u8,
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceRow {
    pub pair: String,
    pub test: String,
    pub n: usize,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub p_one_sided: Option<f64>,
    pub significant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub instance_count: usize,
    pub error_count: usize,
    pub overall_accuracy: f64,
    pub per_bucket: Vec<BucketStat>,
    pub recall_at: BTreeMap<usize, f64>,
    #[serde(default)]
    pub significance: Vec<SignificanceRow>,
}

/// Aggregates one run. `gold_docs` maps qa id → gold document id; Recall@K
/// is computed for each K in `recall_ks` over the instances that have a gold
/// document, provided the run retrieved anything at all.
pub fn build_report(
    label: &str,
    results: &[InstanceResult],
    gold_docs: &BTreeMap<String, String>,
    recall_ks: &[usize],
) -> EvalReport {
    let mut sorted: Vec<&InstanceResult> = results.iter().collect();
    sorted.sort_by(|a, b| a.qa_id.cmp(&b.qa_id));

    let mut per_bucket: Vec<BucketStat> = (0..BUCKETS as u8)
        .map(|bucket| BucketStat {
            bucket,
            count: 0,
            correct: 0,
            accuracy: 0.0,
        })
        .collect();
    for r in &sorted {
        let b = &mut per_bucket[usize::from(r.bucket).min(BUCKETS - 1)];
        b.count += 1;
        b.correct += usize::from(r.correct);
    }
    for b in &mut per_bucket {
        if b.count > 0 {
            b.accuracy = b.correct as f64 / b.count as f64;
        }
    }
    let correct: usize = per_bucket.iter().map(|b| b.correct).sum();
    let overall_accuracy = if sorted.is_empty() {
        0.0
    } else {
        correct as f64 / sorted.len() as f64
    };

    let mut recall_at = BTreeMap::new();
    if sorted.iter().any(|r| !r.retrieved_doc_ids.is_empty()) {
        let with_gold: Vec<(&InstanceResult, &String)> = sorted
            .iter()
            .filter_map(|r| gold_docs.get(&r.qa_id).map(|g| (*r, g)))
            .collect();
        if !with_gold.is_empty() {
            let mut ks: Vec<usize> = recall_ks.iter().copied().filter(|&k| k >= 1).collect();
            ks.sort_unstable();
            ks.dedup();
            for k in ks {
                let hits: usize = with_gold
                    .iter()
                    .map(|(r, g)| usize::from(hit_at_k(r.retrieved_doc_ids.iter().map(String::as_str), g, k)))
                    .sum();
                recall_at.insert(k, hits as f64 / with_gold.len() as f64);
            }
        }
    }

    EvalReport {
        label: label.to_owned(),
        instance_count: sorted.len(),
        error_count: sorted.iter().filter(|r| r.error.is_some()).count(),
        overall_accuracy,
        per_bucket,
        recall_at,
        significance: Vec::new(),
    }
}

/// Paired correctness vectors of two runs over the same questions, aligned by qa id.
pub fn paired_correctness(
    left: &[InstanceResult],
    right: &[InstanceResult],
) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
    let index = |rs: &[InstanceResult]| -> Result<BTreeMap<String, bool>, EvalError> {
        let mut m = BTreeMap::new();
        for r in rs {
            if m.insert(r.qa_id.clone(), r.correct).is_some() {
                return Err(EvalError::DuplicateId(r.qa_id.clone()));
            }
        }
        Ok(m)
    };
    let (l, r) = (index(left)?, index(right)?);
    let only_left = l.keys().filter(|k| !r.contains_key(*k)).count();
    let only_right = r.keys().filter(|k| !l.contains_key(*k)).count();
    if only_left + only_right > 0 {
        return Err(EvalError::MismatchedRuns { only_left, only_right });
    }
    Ok(l.iter()
        .map(|(k, &c)| (f64::from(u8::from(c)), f64::from(u8::from(r[k]))))
        .unzip())
}

/// Wilcoxon and paired t-test between two runs' correctness vectors.
pub fn compare_runs(
    left_label: &str,
    left: &[InstanceResult],
    right_label: &str,
    right: &[InstanceResult],
) -> Result<Vec<SignificanceRow>, EvalError> {
    let (a, b) = paired_correctness(left, right)?;
    let pair = format!("{left_label} vs {right_label}");
    let w = wilcoxon_signed_rank(&a, &b)?;
    let mut rows = vec![SignificanceRow {
        pair: pair.clone(),
        test: "wilcoxon".into(),
        n: w.n,
        statistic: Some(w.statistic),
        p_value: Some(w.p_two_sided),
        p_one_sided: Some(w.p_greater),
        significant: w.p_two_sided < ALPHA,
        note: (w.method == stats::WilcoxonMethod::Undefined).then(|| "all paired differences are zero".to_owned()),
    }];
    rows.push(match paired_t_test(&a, &b) {
        Ok(t) => SignificanceRow {
            pair,
            test: "t-test".into(),
            n: a.len(),
            statistic: Some(t.t),
            p_value: Some(t.p_two_sided),
            p_one_sided: Some(t.p_greater),
            significant: t.p_two_sided < ALPHA,
            note: None,
        },
        Err(e @ (StatsError::DegenerateVariance | StatsError::TooFewPairs { .. })) => SignificanceRow {
            pair,
            test: "t-test".into(),
            n: a.len(),
            statistic: None,
            p_value: None,
            p_one_sided: None,
            significant: false,
            note: Some(e.to_string()),
        },
        Err(e) => return Err(e.into()),
    });
    Ok(rows)
}

fn fmt_opt(x: Option<f64>, prec: usize) -> String {
    x.map_or_else(|| "-".to_owned(), |v| format!("{v:.prec$}"))
}

/// Plain-text rendering of one or more reports.
pub fn render_text(reports: &[EvalReport], significance: &[SignificanceRow]) -> String {
    let mut out = String::new();
    for r in reports {
        let _ = writeln!(out, "run: {}", r.label);
        let _ = writeln!(
            out,
            "  instances: {}  errors: {}  accuracy: {:.4}",
            r.instance_count, r.error_count, r.overall_accuracy
        );
        let _ = writeln!(out, "  bucket  count  correct  accuracy");
        for b in &r.per_bucket {
            let _ = writeln!(
                out,
                "  {:>6}  {:>5}  {:>7}  {:>8.4}",
                b.bucket, b.count, b.correct, b.accuracy
            );
        }
        for (k, v) in &r.recall_at {
            let _ = writeln!(out, "  recall@{k}: {v:.4}");
        }
    }
    if !significance.is_empty() {
        let _ = writeln!(out, "significance (alpha = {ALPHA}):");
        for s in significance {
            let _ = writeln!(
                out,
                "  {:<30} {:<9} n={:<5} stat={:<10} p={:<10} {}{}",
                s.pair,
                s.test,
                s.n,
                fmt_opt(s.statistic, 4),
                fmt_opt(s.p_value, 6),
                if s.significant { "*" } else { "" },
                s.note.as_deref().map(|n| format!(" ({n})")).unwrap_or_default()
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::ScoredDoc;

    fn g(answers: &[&str]) -> Vec<String> {
        answers.iter().map(|s| s.to_string()).collect()
    }

    fn result(id: &str, correct: bool, bucket: u8) -> InstanceResult {
        InstanceResult {
            qa_id: id.into(),
            prediction: String::new(),
            correct,
            bucket,
            retrieved_doc_ids: vec![],
            hint_used: None,
            error: None,
        }
    }

    #[test]
    fn substring_match_behaviour() {
        assert!(!is_correct("Nathanson", &g(&["Jeff Nathanson"])));
        assert!(is_correct(
            "It was written by Steven Spielberg, Jeff Nathanson and David Koepp.",
            &g(&["Jeff Nathanson"])
        ));
        assert!(is_correct("Paris", &g(&["Paris"])));
        assert!(is_correct("PARIS,  France", &g(&["paris"])));
        assert!(!is_correct("anything", &g(&[""])));
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[]), 0.0);
        assert_eq!(accuracy(&[result("a", true, 0), result("b", true, 0)]), 1.0);
        assert_eq!(accuracy(&[result("a", false, 0)]), 0.0);
        let three_of_four = [
            result("a", true, 0),
            result("b", true, 1),
            result("c", false, 2),
            result("d", true, 3),
        ];
        assert_eq!(accuracy(&three_of_four), 0.75);
    }

    #[test]
    fn recall_cases() {
        let ranked = RankedList::from_scores(
            "q",
            ["a", "b", "c", "gold"].iter().enumerate().map(|(i, d)| ScoredDoc {
                doc_id: d.to_string(),
                score: 10.0 - i as f64,
            }),
            4,
        );
        assert_eq!(recall_at_k(&ranked, "a", 1), 1);
        assert_eq!(recall_at_k(&ranked, "gold", 3), 0);
        assert_eq!(recall_at_k(&ranked, "gold", 4), 1);
        assert!((1..6).all(|k| recall_at_k(&ranked, "zz", k) == 0));
    }

    #[test]
    fn bucket_examples() {
        let e = LogBase::Ten.default_edges();
        assert_eq!(assign_bucket(1000, LogBase::Ten, &e).unwrap(), 1);
        assert_eq!(assign_bucket(0, LogBase::Ten, &e).unwrap(), 0);
        assert_eq!(assign_bucket(1_000_000, LogBase::Ten, &e).unwrap(), 4);
        assert_eq!(assign_bucket(1001, LogBase::Ten, &e).unwrap(), 2);
        let e2 = LogBase::Two.default_edges();
        assert_eq!(assign_bucket(64, LogBase::Two, &e2).unwrap(), 0);
        assert_eq!(assign_bucket(256, LogBase::Two, &e2).unwrap(), 1);
        assert_eq!(assign_bucket(257, LogBase::Two, &e2).unwrap(), 2);
    }

    #[test]
    fn malformed_edges() {
        assert!(BucketEdges::new(&[1.0, 2.0, 3.0]).is_err());
        assert!(BucketEdges::new(&[1.0, 1.0, 2.0, 3.0]).is_err());
        assert!(BucketEdges::new(&[1.0, f64::NAN, 2.0, 3.0]).is_err());
        let bad = BucketEdges([3.0, 2.0, 4.0, 5.0]);
        assert!(assign_bucket(10, LogBase::Ten, &bad).is_err());
    }

    #[test]
    fn report_single_instance() {
        let r = build_report("run", &[result("q1", true, 0)], &BTreeMap::new(), &[1]);
        assert_eq!(r.overall_accuracy, 1.0);
        assert_eq!(r.per_bucket[0].accuracy, 1.0);
        assert!(r.per_bucket[1..].iter().all(|b| b.count == 0));
        assert!(r.recall_at.is_empty());
    }

    #[test]
    fn report_hand_tally() {
        let mut rs = vec![
            result("q1", true, 0),
            result("q2", false, 0),
            result("q3", true, 2),
            result("q4", true, 4),
            result("q5", false, 4),
            result("q6", false, 4),
        ];
        rs[0].retrieved_doc_ids = vec!["g1".into(), "x".into()];
        rs[1].retrieved_doc_ids = vec!["x".into(), "g2".into()];
        rs[2].retrieved_doc_ids = vec!["x".into()];
        let gold: BTreeMap<String, String> = [("q1", "g1"), ("q2", "g2"), ("q3", "g3")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let r = build_report("run", &rs, &gold, &[2, 1]);
        assert_eq!(r.instance_count, 6);
        assert!((r.overall_accuracy - 0.5).abs() < 1e-15);
        let counts: Vec<usize> = r.per_bucket.iter().map(|b| b.count).collect();
        assert_eq!(counts, [2, 0, 1, 0, 3]);
        assert_eq!(r.per_bucket[0].accuracy, 0.5);
        assert_eq!(r.per_bucket[2].accuracy, 1.0);
        assert!((r.per_bucket[4].accuracy - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.recall_at[&1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.recall_at[&2] - 2.0 / 3.0).abs() < 1e-15);

        let mut shuffled = rs.clone();
        shuffled.reverse();
        shuffled.swap(1, 4);
        assert_eq!(build_report("run", &shuffled, &gold, &[1, 2]), r);
    }

    #[test]
    fn identical_runs_give_p_one() {
        let rs = vec![result("a", true, 0), result("b", false, 1), result("c", true, 2)];
        let rows = compare_runs("x", &rs, "y", &rs).unwrap();
        assert_eq!(rows[0].p_value, Some(1.0));
        assert!(!rows[0].significant);
        assert_eq!(rows[1].p_value, None);
    }

    #[test]
    fn mismatched_runs_are_rejected() {
        let a = vec![result("a", true, 0)];
        let b = vec![result("b", true, 0)];
        assert!(matches!(
            compare_runs("x", &a, "y", &b),
            Err(EvalError::MismatchedRuns {
                only_left: 1,
                only_right: 1
            })
        ));
    }

    #[test]
    fn dataset_parsing() {
        let src = r#"{"id":"q1","question":"Who?","answers":["A","B"],"entity_id":"Q1","pageviews":12,"relation":"occupation"}"#;
        let ds = read_dataset(src.as_bytes()).unwrap();
        assert_eq!(ds[0].gold_answers, ["A", "B"]);
        let empty = r#"{"id":"q1","question":"Who?","answers":[],"entity_id":"Q1","pageviews":12}"#;
        assert!(read_dataset(empty.as_bytes()).is_err());
        let neg = r#"{"id":"q1","question":"Who?","answers":["a"],"entity_id":"Q1","pageviews":-3}"#;
        assert!(read_dataset(neg.as_bytes()).is_err());
    }
}
