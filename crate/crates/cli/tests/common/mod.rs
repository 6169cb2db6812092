//! Synthetic long-tail corpus shared by the integration suites.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

pub const ANSWER_PATTERN: &str = r"\b[A-Z][a-z]+ford\b";
pub const ENTITIES: usize = 50;

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ren", "tor", "vel", "sa", "dun", "bri", "mar", "zek", "pol", "fi", "nor", "gal", "ther", "qua",
    "sil", "ob", "ran", "tes", "ul", "vin", "cor",
];
const OCCUPATIONS: &[&str] = &[
    "sculptor",
    "chemist",
    "cartographer",
    "violinist",
    "architect",
    "botanist",
];
const TOPICS: &[&str] = &[
    "river bridges",
    "glass mosaics",
    "alpine mosses",
    "choral works",
    "tide tables",
];
const PAGEVIEWS: &[u64] = &[0, 40, 650, 5_200, 48_000, 910_000, 1_000, 99];

#[derive(Debug, Clone)]
pub struct Entity {
    pub id: String,
    pub first: String,
    pub last: String,
    pub place: String,
}

pub struct Synthetic {
    pub corpus_path: PathBuf,
    pub dataset_path: PathBuf,
    pub entities: Vec<Entity>,
    /// Recall@3 of the summary document under a from-scratch BM25 ranking.
    pub oracle_recall_at_3: f64,
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map_or_else(String::new, |f| f.to_uppercase().collect::<String>() + c.as_str())
}

fn word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    capitalize(
        &(0..syllables)
            .map(|_| *SYLLABLES.choose(rng).unwrap())
            .collect::<String>(),
    )
}

fn entities(rng: &mut ChaCha8Rng) -> Vec<Entity> {
    let mut used = BTreeSet::new();
    let mut fresh = |rng: &mut ChaCha8Rng, n: usize| loop {
        let w = word(rng, n);
        if used.insert(w.to_lowercase()) {
            return w;
        }
    };
    (0..ENTITIES)
        .map(|i| Entity {
            id: format!("E{i:02}"),
            first: fresh(rng, 2),
            last: fresh(rng, 3),
            place: fresh(rng, 2) + "ford",
        })
        .collect()
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Ids of the top `k` documents for `query` under BM25 (k1 1.2, b 0.75),
/// ties broken by id; computed from raw token counts without any index.
pub fn brute_top_k(docs: &[(String, String)], query: &str, k: usize) -> Vec<String> {
    let toks: Vec<Vec<String>> = docs.iter().map(|(_, t)| tokens(t)).collect();
    let n = docs.len() as f64;
    let avg = toks.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let q = tokens(query);
    let mut scored: Vec<(f64, &str)> = docs
        .iter()
        .zip(&toks)
        .map(|((id, _), dt)| {
            let mut s = 0.0;
            for term in &q {
                let tf = dt.iter().filter(|t| *t == term).count() as f64;
                if tf > 0.0 {
                    let df = toks.iter().filter(|d| d.contains(term)).count() as f64;
                    let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                    s += idf * tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * dt.len() as f64 / avg));
                }
            }
            (s, id.as_str())
        })
        .filter(|(s, _)| *s > 0.0)
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    scored.into_iter().take(k).map(|(_, id)| id.to_owned()).collect()
}

/// `(id, text)` of every line of a corpus file.
pub fn corpus_texts(path: &Path) -> Vec<(String, String)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            (
                v["id"].as_str().unwrap().to_owned(),
                v["text"].as_str().unwrap().to_owned(),
            )
        })
        .collect()
}

pub fn question(e: &Entity) -> String {
    format!("Where was {} {} born?", e.first, e.last)
}

/// Writes a 100-document corpus (one summary and one distractor per entity)
/// and one question per entity into `dir`.
///
/// In the plain variant the answer opens the summary document and each
/// distractor shares only the surname with its question. In the
/// distractor-heavy variant the summary's first sentence omits the answer,
/// and every distractor carries the full name next to a wrong place.
pub fn write_synthetic(dir: &Path, heavy: bool, seed: u64) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ents = entities(&mut rng);
    let mut docs = Vec::new();
    for (i, e) in ents.iter().enumerate() {
        let occupation = OCCUPATIONS.choose(&mut rng).unwrap();
        let topic = TOPICS.choose(&mut rng).unwrap();
        let other = &ents[(i + 1 + rng.gen_range(0..ENTITIES - 1)) % ENTITIES].place;
        let (summary, distractor) = if heavy {
            (
                format!(
                    "{} is a celebrated {occupation}. {} {} was born in {}. {} is known for {topic}.",
                    e.last, e.first, e.last, e.place, e.last
                ),
                format!(
                    "{} {} visited {other} every summer. The trips to {other} inspired later work.",
                    e.first, e.last
                ),
            )
        } else {
            (
                format!(
                    "{} {} was born in {}. {} worked as a {occupation} for many years. {} {} is known for {topic}.",
                    e.first, e.last, e.place, e.last, e.first, e.last
                ),
                format!(
                    "{} Street is a road in {other}. The road hosts a weekly market.",
                    e.last
                ),
            )
        };
        docs.push(
            json!({"id": format!("{}_summary", e.id.to_lowercase()), "title": format!("{} {}", e.first, e.last),
            "text": summary, "entity_id": e.id, "is_summary": true}),
        );
        docs.push(
            json!({"id": format!("{}_note", e.id.to_lowercase()), "title": format!("{} Street", e.last),
            "text": distractor}),
        );
    }
    let corpus_path = dir.join("corpus.jsonl");
    fs::write(
        &corpus_path,
        docs.iter().map(|d| d.to_string() + "\n").collect::<String>(),
    )
    .unwrap();

    let dataset: Vec<String> = ents
        .iter()
        .enumerate()
        .map(|(i, e)| {
            json!({"id": format!("q{i:02}"), "question": question(e), "answers": [e.place],
                "entity_id": e.id, "pageviews": PAGEVIEWS[i % PAGEVIEWS.len()], "relation": "place_of_birth"})
            .to_string()
        })
        .collect();
    let dataset_path = dir.join("questions.jsonl");
    fs::write(&dataset_path, dataset.join("\n") + "\n").unwrap();

    let pairs = corpus_texts(&corpus_path);
    let hits = ents
        .iter()
        .filter(|e| brute_top_k(&pairs, &question(e), 3).contains(&format!("{}_summary", e.id.to_lowercase())))
        .count();
    Synthetic {
        corpus_path,
        dataset_path,
        entities: ents,
        oracle_recall_at_3: hits as f64 / ENTITIES as f64,
    }
}

/// A TOML run configuration over `syn`.
pub fn config_toml(syn: &Synthetic, out: &Path, retriever: &str, variant: &str, k: usize, scope: &str) -> String {
    let hint = if variant.starts_with("SRAG") {
        "\n[hint]\nranker = \"bm25\"\n"
    } else {
        ""
    };
    format!(
        r#"corpus_path = "{}"
dataset_path = "{}"
output_dir = "{}"
top_k_context = {k}
variant = "{variant}"

[retriever]
kind = "{retriever}"
{hint}
[generator.mock]
kind = "extractive"
pattern = '{ANSWER_PATTERN}'
scope = "{scope}"
"#,
        syn.corpus_path.display(),
        syn.dataset_path.display(),
        out.display()
    )
}

pub fn read_bytes(paths: &[PathBuf]) -> BTreeMap<PathBuf, Vec<u8>> {
    paths.iter().map(|p| (p.clone(), fs::read(p).unwrap())).collect()
}
