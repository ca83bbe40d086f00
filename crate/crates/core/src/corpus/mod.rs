//! Products, community Q&A pairs and user-query logs.
//!
//! Both the corpus and the query log are JSONL, one record per line, so
//! errors can be reported with a line number.

mod synthetic;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokenize;

pub use synthetic::{generate_synthetic_corpus, SynthConfig, ATTRIBUTES};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CqaPair {
    pub qa_id: String,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Product {
    pub product_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default)]
    pub pairs: Vec<CqaPair>,
}

impl Product {
    pub fn pair(&self, qa_id: &str) -> Option<&CqaPair> {
        self.pairs.iter().find(|p| p.qa_id == qa_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relevance {
    Relevant,
    Irrelevant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserQueryRecord {
    pub query_id: String,
    pub product_id: String,
    #[serde(rename = "query")]
    pub query_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_qa_id: Option<String>,
    #[serde(rename = "labels", default, skip_serializing_if = "Option::is_none")]
    pub relevance_labels: Option<BTreeMap<String, Relevance>>,
}

impl UserQueryRecord {
    pub fn relevant_ids(&self) -> Vec<&str> {
        self.relevance_labels
            .iter()
            .flatten()
            .filter(|(_, r)| **r == Relevance::Relevant)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub num_products: usize,
    pub num_pairs: usize,
    pub num_queries: usize,
    pub avg_query_len: f64,
    pub avg_cqa_question_len: f64,
    pub vocab_overlap_pct: f64,
}

/// A loaded query log plus the non-fatal problems found in it.
#[derive(Debug, Clone, Default)]
pub struct QueryLog {
    pub records: Vec<UserQueryRecord>,
    pub warnings: Vec<String>,
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, line));
    }
    Ok(out)
}

fn validate_product(product: &Product, line: usize) -> Result<()> {
    let mut seen = HashSet::new();
    for pair in &product.pairs {
        if !seen.insert(pair.qa_id.as_str()) {
            return Err(Error::DuplicateId {
                kind: "qa",
                id: pair.qa_id.clone(),
                line,
            });
        }
        if pair.question.trim().is_empty() || pair.answer.trim().is_empty() {
            return Err(Error::InvalidRecord {
                line,
                message: format!("pair {:?} has an empty question or answer", pair.qa_id),
            });
        }
    }
    Ok(())
}

pub fn parse_corpus(text: &str) -> Result<Vec<Product>> {
    let lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_owned()))
        .collect();
    parse_corpus_lines(lines)
}

fn parse_corpus_lines(lines: Vec<(usize, String)>) -> Result<Vec<Product>> {
    let mut products = Vec::with_capacity(lines.len());
    let mut ids = HashSet::new();
    for (line, raw) in lines {
        let product: Product = serde_json::from_str(&raw).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if !ids.insert(product.product_id.clone()) {
            return Err(Error::DuplicateId {
                kind: "product",
                id: product.product_id,
                line,
            });
        }
        validate_product(&product, line)?;
        products.push(product);
    }
    Ok(products)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Product>> {
    parse_corpus_lines(read_lines(path.as_ref())?)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn save_corpus(path: impl AsRef<Path>, products: &[Product]) -> Result<()> {
    write_jsonl(path.as_ref(), products)
}

pub fn save_query_log(path: impl AsRef<Path>, records: &[UserQueryRecord]) -> Result<()> {
    write_jsonl(path.as_ref(), records)
}

/// Loads a query log. References to products (or teacher pairs) missing from
/// `products` are reported as warnings; the records are kept.
pub fn load_query_log(path: impl AsRef<Path>, products: &[Product]) -> Result<QueryLog> {
    let mut records = Vec::new();
    for (line, raw) in read_lines(path.as_ref())? {
        let rec: UserQueryRecord = serde_json::from_str(&raw).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    let warnings = check_query_log(&records, products);
    for w in &warnings {
        tracing::warn!("{w}");
    }
    Ok(QueryLog { records, warnings })
}

pub fn check_query_log(records: &[UserQueryRecord], products: &[Product]) -> Vec<String> {
    let by_id: HashMap<&str, &Product> = products.iter().map(|p| (p.product_id.as_str(), p)).collect();
    let mut warnings = Vec::new();
    for rec in records {
        match by_id.get(rec.product_id.as_str()) {
            None => warnings.push(format!(
                "query {:?} references unknown product {:?}",
                rec.query_id, rec.product_id
            )),
            Some(p) => {
                if let Some(t) = &rec.teacher_qa_id {
                    if p.pair(t).is_none() {
                        warnings.push(format!(
                            "query {:?} teacher pair {:?} not found on product {:?}",
                            rec.query_id, t, rec.product_id
                        ));
                    }
                }
            }
        }
    }
    warnings
}

pub fn corpus_stats(products: &[Product], queries: &[UserQueryRecord]) -> CorpusStats {
    let mut cqa_vocab = HashSet::new();
    let mut q_tokens = 0usize;
    let mut num_pairs = 0usize;
    for p in products {
        for pair in &p.pairs {
            num_pairs += 1;
            let qt = tokenize(&pair.question);
            q_tokens += qt.len();
            cqa_vocab.extend(qt);
            cqa_vocab.extend(tokenize(&pair.answer));
        }
    }
    let mut query_vocab = HashSet::new();
    let mut query_tokens = 0usize;
    for q in queries {
        let t = tokenize(&q.query_text);
        query_tokens += t.len();
        query_vocab.extend(t);
    }
    let mean = |total: usize, n: usize| if n == 0 { 0.0 } else { total as f64 / n as f64 };
    let overlap = if query_vocab.is_empty() {
        0.0
    } else {
        query_vocab.intersection(&cqa_vocab).count() as f64 / query_vocab.len() as f64 * 100.0
    };
    CorpusStats {
        num_products: products.len(),
        num_pairs,
        num_queries: queries.len(),
        avg_query_len: mean(query_tokens, queries.len()),
        avg_cqa_question_len: mean(q_tokens, num_pairs),
        vocab_overlap_pct: overlap,
    }
}

/// Number of tokens `query` shares with the question or answer of `pair`.
pub fn token_overlap(query: &str, pair: &CqaPair) -> usize {
    let q: HashSet<String> = tokenize(query).into_iter().collect();
    let mut doc: HashSet<String> = tokenize(&pair.question).into_iter().collect();
    doc.extend(tokenize(&pair.answer));
    q.intersection(&doc).count()
}

/// True when the query shares no token with any of its relevant pairs.
pub fn has_zero_overlap(query: &UserQueryRecord, products: &[Product]) -> bool {
    let Some(product) = products.iter().find(|p| p.product_id == query.product_id) else {
        return false;
    };
    query
        .relevant_ids()
        .iter()
        .filter_map(|id| product.pair(id))
        .all(|pair| token_overlap(&query.query_text, pair) == 0)
}

fn split_by<T: Clone>(items: &[T], test_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::InvalidConfig(format!("test fraction {test_fraction} outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (items.len() as f64 * test_fraction).round() as usize;
    let mut test_idx: Vec<usize> = order[..n_test].to_vec();
    let mut train_idx: Vec<usize> = order[n_test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((
        train_idx.iter().map(|&i| items[i].clone()).collect(),
        test_idx.iter().map(|&i| items[i].clone()).collect(),
    ))
}

/// Deterministic (train, test) split of the query log; input order is kept
/// within each side.
pub fn split_queries(
    queries: &[UserQueryRecord],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<UserQueryRecord>, Vec<UserQueryRecord>)> {
    split_by(queries, test_fraction, seed)
}

/// Deterministic (train, test) split of products.
pub fn split_products(products: &[Product], test_fraction: f64, seed: u64) -> Result<(Vec<Product>, Vec<Product>)> {
    split_by(products, test_fraction, seed)
}
