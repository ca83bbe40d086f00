//! Exact BM25 over one product's questions or answers.
//!
//! Statistics are scoped per product and per side: the questions of a
//! product form one document collection, its answers another. Each pair's
//! document is addressed by its `qa_id`.
//!
//! ```text
//! bm25(q, D) = Σ_i IDF(q_i) · TF(q_i, D)·(k + 1) / (TF(q_i, D) + k·(1 − b + b·|D|/avgdl))
//! IDF(q_i)   = ln((N − m(q_i) + 0.5) / (m(q_i) + 0.5) + 1)
//! ```

use std::collections::HashMap;

use crate::corpus::Product;
use crate::error::{Error, Result};
use crate::text::tokenize;

pub const DEFAULT_K: f64 = 1.5;
pub const DEFAULT_B: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Questions,
    Answers,
}

#[derive(Debug, Clone)]
pub struct DocStats {
    pub qa_id: String,
    pub term_freq: HashMap<String, u32>,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct Bm25ProductStats {
    pub num_docs: usize,
    pub avgdl: f64,
    pub doc_freq: HashMap<String, usize>,
    pub docs: Vec<DocStats>,
    pub k: f64,
    pub b: f64,
    by_id: HashMap<String, usize>,
}

impl Bm25ProductStats {
    pub fn from_docs<'a>(docs: impl IntoIterator<Item = (&'a str, &'a str)>, k: f64, b: f64) -> Self {
        let mut out = Vec::new();
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        let mut by_id = HashMap::new();
        for (id, text) in docs {
            let tokens = tokenize(text);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for t in tf.keys() {
                *doc_freq.entry(t.clone()).or_default() += 1;
            }
            by_id.insert(id.to_owned(), out.len());
            out.push(DocStats {
                qa_id: id.to_owned(),
                term_freq: tf,
                len: tokens.len(),
            });
        }
        let total: usize = out.iter().map(|d| d.len).sum();
        let avgdl = if out.is_empty() { 0.0 } else { total as f64 / out.len() as f64 };
        Self {
            num_docs: out.len(),
            avgdl,
            doc_freq,
            docs: out,
            k,
            b,
            by_id,
        }
    }

    /// m(token): number of documents containing `token`.
    pub fn doc_freq(&self, token: &str) -> usize {
        self.doc_freq.get(token).copied().unwrap_or(0)
    }

    pub fn idf(&self, token: &str) -> f64 {
        let n = self.num_docs as f64;
        let m = self.doc_freq(token) as f64;
        ((n - m + 0.5) / (m + 0.5) + 1.0).ln()
    }

    pub fn doc(&self, doc_id: &str) -> Option<&DocStats> {
        self.by_id.get(doc_id).map(|&i| &self.docs[i])
    }
}

pub fn build_stats(product: &Product, side: Side) -> Result<Bm25ProductStats> {
    build_stats_with(product, side, DEFAULT_K, DEFAULT_B)
}

pub fn build_stats_with(product: &Product, side: Side, k: f64, b: f64) -> Result<Bm25ProductStats> {
    if product.pairs.is_empty() {
        return Err(Error::EmptyProduct(product.product_id.clone()));
    }
    let docs = product.pairs.iter().map(|p| {
        let text = match side {
            Side::Questions => p.question.as_str(),
            Side::Answers => p.answer.as_str(),
        };
        (p.qa_id.as_str(), text)
    });
    Ok(Bm25ProductStats::from_docs(docs, k, b))
}

pub fn bm25_score<S: AsRef<str>>(stats: &Bm25ProductStats, query_tokens: &[S], doc_id: &str) -> Result<f64> {
    let doc = stats
        .doc(doc_id)
        .ok_or_else(|| Error::UnknownDocument(doc_id.to_owned()))?;
    let norm = stats.k * (1.0 - stats.b + stats.b * doc.len as f64 / stats.avgdl.max(f64::MIN_POSITIVE));
    let mut score = 0.0;
    for term in query_tokens {
        let term = term.as_ref();
        let tf = doc.term_freq.get(term).copied().unwrap_or(0);
        if tf == 0 {
            continue;
        }
        let tf = f64::from(tf);
        score += stats.idf(term) * tf * (stats.k + 1.0) / (tf + norm);
    }
    Ok(score)
}

/// `alpha · bm25(q, Q) + (1 − alpha) · bm25(q, A)`; higher is more relevant.
pub fn qa_relevance_bm25<S: AsRef<str>>(
    q_stats: &Bm25ProductStats,
    a_stats: &Bm25ProductStats,
    query_tokens: &[S],
    qa_id: &str,
    alpha: f64,
) -> Result<f64> {
    let q = bm25_score(q_stats, query_tokens, qa_id)?;
    let a = bm25_score(a_stats, query_tokens, qa_id)?;
    Ok(alpha * q + (1.0 - alpha) * a)
}

/// Per-product BM25 statistics for both sides of a corpus, built once.
#[derive(Debug, Clone)]
pub struct Bm25Ranker {
    products: HashMap<String, (Bm25ProductStats, Bm25ProductStats)>,
    alpha: f64,
}

impl Bm25Ranker {
    pub fn new(products: &[Product], alpha: f64) -> Self {
        let products = products
            .iter()
            .filter(|p| !p.pairs.is_empty())
            .map(|p| {
                let q = build_stats(p, Side::Questions).expect("non-empty product");
                let a = build_stats(p, Side::Answers).expect("non-empty product");
                (p.product_id.clone(), (q, a))
            })
            .collect();
        Self { products, alpha }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn stats(&self, product_id: &str) -> Option<&(Bm25ProductStats, Bm25ProductStats)> {
        self.products.get(product_id)
    }

    /// Top-k pairs by combined score. Pairs scoring 0 are dropped, so a query
    /// with no lexical evidence gets an empty answer. Products with no pairs,
    /// or unknown to the ranker, also give an empty answer.
    pub fn topk(&self, product_id: &str, query_text: &str, k: usize) -> Vec<(String, f64)> {
        let Some((q_stats, a_stats)) = self.products.get(product_id) else {
            return Vec::new();
        };
        let tokens = tokenize(query_text);
        let mut scored: Vec<(String, f64)> = q_stats
            .docs
            .iter()
            .map(|d| {
                let s = qa_relevance_bm25(q_stats, a_stats, &tokens, &d.qa_id, self.alpha)
                    .expect("both sides index the same pairs");
                (d.qa_id.clone(), s)
            })
            .filter(|(_, s)| *s > 0.0)
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }
}

/// One-shot top-k for a single product.
pub fn bm25_topk(product: &Product, query_text: &str, k: usize, alpha: f64) -> Vec<(String, f64)> {
    Bm25Ranker::new(std::slice::from_ref(product), alpha).topk(&product.product_id, query_text, k)
}
