//! Ranking metrics and the two offline evaluation protocols.
//!
//! Ties are always resolved against the system being evaluated: among equal
//! scores, irrelevant items rank first. Every metric is therefore a lower
//! bound and independent of input order.

use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bm25::{bm25_score, Bm25Ranker};
use crate::corpus::{Product, Relevance, UserQueryRecord};
use crate::encoder::Embed;
use crate::error::{Error, Result};
use crate::index::SemanticIndex;
use crate::text::tokenize;

pub const DEFAULT_MIN_PAIRS: usize = 5;

fn need_relevant(judgments: &[bool]) -> Result<()> {
    if !judgments.iter().any(|&r| r) {
        return Err(Error::Metric("ranking has no relevant entry".into()));
    }
    Ok(())
}

pub fn precision_at_1(judgments: &[bool]) -> Result<f64> {
    match judgments.first() {
        None => Err(Error::Metric("empty ranking".into())),
        Some(&r) => Ok(if r { 1.0 } else { 0.0 }),
    }
}

/// Mean over relevant positions `i` of (relevant in top `i`) / `i`.
pub fn average_precision(judgments: &[bool]) -> Result<f64> {
    need_relevant(judgments)?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in judgments.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / hits as f64)
}

/// `1 / (irrelevant entries above the first relevant one + 1)`.
pub fn reciprocal_rank_paper(judgments: &[bool]) -> Result<f64> {
    need_relevant(judgments)?;
    let first = judgments.iter().position(|&r| r).expect("checked above");
    let irrelevant_above = judgments[..first].iter().filter(|&&r| !r).count();
    Ok(1.0 / (irrelevant_above + 1) as f64)
}

/// Orders labels by descending score, irrelevant first among ties.
pub fn rank_pessimal(scored: &[(f64, bool)]) -> Vec<bool> {
    let mut order: Vec<&(f64, bool)> = scored.iter().collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    order.into_iter().map(|&(_, l)| l).collect()
}

/// Area under the precision-recall curve as average precision over pairs
/// sorted by descending score (higher = more relevant).
pub fn pr_auc(scored_pairs: &[(f64, bool)]) -> Result<f64> {
    let positives = scored_pairs.iter().filter(|p| p.1).count();
    if positives == 0 || positives == scored_pairs.len() {
        return Err(Error::Metric(format!(
            "PR-AUC needs both labels; got {positives} positives of {}",
            scored_pairs.len()
        )));
    }
    average_precision(&rank_pessimal(scored_pairs))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDetail {
    pub id: String,
    pub product_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_at_1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub average_precision: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reciprocal_rank: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub responses: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevant_responses: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub protocol: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_at_1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mrr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pr_auc: Option<f64>,
    pub num_queries: usize,
    /// Queries that could not be scored (no relevant candidate, no labels).
    pub excluded_queries: usize,
    /// Queries for which the system returned nothing.
    pub uncovered_queries: usize,
    /// Retrieved pairs with no label, left out of PR-AUC.
    pub unlabeled_pairs: usize,
    pub num_pairs: usize,
    pub per_query: Vec<QueryDetail>,
}

impl EvalReport {
    fn empty(model: &str, protocol: &str) -> Self {
        Self {
            model: model.to_string(),
            protocol: protocol.to_string(),
            p_at_1: None,
            map: None,
            mrr: None,
            pr_auc: None,
            num_queries: 0,
            excluded_queries: 0,
            uncovered_queries: 0,
            unlabeled_pairs: 0,
            num_pairs: 0,
            per_query: Vec::new(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Scores every answer of a product against a question. Higher means more
/// relevant; the result has one entry per pair, in pair order.
pub trait CqaScorer {
    fn score_answers(&self, product: &Product, question: &str) -> Vec<f64>;
}

impl<F: Fn(&Product, &str) -> Vec<f64>> CqaScorer for F {
    fn score_answers(&self, product: &Product, question: &str) -> Vec<f64> {
        self(product, question)
    }
}

/// Negated squared distance between the question and answer embeddings.
pub struct EmbedCqaScorer<'a, E: ?Sized>(pub &'a E);

impl<E: Embed + ?Sized> CqaScorer for EmbedCqaScorer<'_, E> {
    fn score_answers(&self, product: &Product, question: &str) -> Vec<f64> {
        let q = self.0.embed(question);
        product
            .pairs
            .iter()
            .map(|p| {
                let a = self.0.embed(&p.answer);
                -q.iter().zip(&a).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
            })
            .collect()
    }
}

/// BM25 of the question against the product's answers.
pub struct Bm25CqaScorer<'a>(pub &'a Bm25Ranker);

impl CqaScorer for Bm25CqaScorer<'_> {
    fn score_answers(&self, product: &Product, question: &str) -> Vec<f64> {
        let tokens = tokenize(question);
        let Some((_, answers)) = self.0.stats(&product.product_id) else {
            return vec![0.0; product.pairs.len()];
        };
        product
            .pairs
            .iter()
            .map(|p| bm25_score(answers, &tokens, &p.qa_id).unwrap_or(0.0))
            .collect()
    }
}

/// Ranks all answers of a product for sampled CQA questions.
///
/// Only products with at least `min_pairs` pairs take part. Up to
/// `sample_size` questions are drawn without replacement; answers to any pair
/// with the same question text count as relevant.
pub fn run_cqa_eval<S: CqaScorer + ?Sized>(
    model: &str,
    products: &[Product],
    scorer: &S,
    min_pairs: usize,
    sample_size: usize,
    seed: u64,
) -> Result<EvalReport> {
    let pool: Vec<(usize, usize)> = products
        .iter()
        .enumerate()
        .filter(|(_, p)| p.pairs.len() >= min_pairs.max(1))
        .flat_map(|(i, p)| (0..p.pairs.len()).map(move |j| (i, j)))
        .collect();
    if pool.is_empty() {
        return Err(Error::InsufficientData(format!("no product has at least {min_pairs} pairs")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = index::sample(&mut rng, pool.len(), sample_size.min(pool.len())).into_vec();
    picks.sort_unstable();

    let mut report = EvalReport::empty(model, "cqa");
    for k in picks {
        let (i, j) = pool[k];
        let product = &products[i];
        let question = &product.pairs[j].question;
        let scores = scorer.score_answers(product, question);
        if scores.len() != product.pairs.len() {
            return Err(Error::DimensionMismatch {
                expected: product.pairs.len(),
                actual: scores.len(),
            });
        }
        let labelled: Vec<(f64, bool)> = scores.iter().zip(&product.pairs).map(|(&s, p)| (s, p.question == *question)).collect();
        let ranking = rank_pessimal(&labelled);
        report.num_queries += 1;
        report.num_pairs += ranking.len();
        let (Ok(ap), Ok(rr)) = (average_precision(&ranking), reciprocal_rank_paper(&ranking)) else {
            report.excluded_queries += 1;
            continue;
        };
        report.per_query.push(QueryDetail {
            id: product.pairs[j].qa_id.clone(),
            product_id: product.product_id.clone(),
            p_at_1: Some(precision_at_1(&ranking)?),
            average_precision: Some(ap),
            reciprocal_rank: Some(rr),
            responses: None,
            relevant_responses: None,
        });
    }
    let detail = &report.per_query;
    report.p_at_1 = Some(mean(detail.iter().filter_map(|d| d.p_at_1)));
    report.map = Some(mean(detail.iter().filter_map(|d| d.average_precision)));
    report.mrr = Some(mean(detail.iter().filter_map(|d| d.reciprocal_rank)));
    Ok(report)
}

/// A system that answers a user query with scored pairs, best first.
/// Scores are higher-is-better.
pub trait Retriever {
    fn retrieve(&self, product_id: &str, query: &str, k: usize) -> Result<Vec<(String, f64)>>;
}

impl Retriever for Bm25Ranker {
    fn retrieve(&self, product_id: &str, query: &str, k: usize) -> Result<Vec<(String, f64)>> {
        Ok(self.topk(product_id, query, k))
    }
}

/// Index lookups with relevance reported as negated distance.
pub struct IndexRetriever<'a, E: ?Sized> {
    pub index: &'a SemanticIndex,
    pub encoder: &'a E,
}

impl<E: Embed + ?Sized> Retriever for IndexRetriever<'_, E> {
    fn retrieve(&self, product_id: &str, query: &str, k: usize) -> Result<Vec<(String, f64)>> {
        let hits = crate::index::query_topk(self.index, self.encoder, product_id, query, k)?;
        Ok(hits.into_iter().map(|(id, d)| (id, -d)).collect())
    }
}

/// PR-AUC over the pooled top-k responses of all labelled queries.
///
/// Pooled pairs that are all relevant score 1.0 and all irrelevant 0.0. If
/// no query receives a labelled response the result is
/// [`Error::NoResponses`] carrying the number of uncovered queries.
pub fn run_user_query_eval<R: Retriever + ?Sized>(
    model: &str,
    retriever: &R,
    queries: &[UserQueryRecord],
    k: usize,
) -> Result<EvalReport> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    let labelled: Vec<&UserQueryRecord> = queries.iter().filter(|q| q.relevance_labels.is_some()).collect();
    if labelled.is_empty() {
        return Err(Error::InsufficientData("no labelled queries".into()));
    }
    let mut report = EvalReport::empty(model, "user");
    report.excluded_queries = queries.len() - labelled.len();
    let mut pooled: Vec<(f64, bool)> = Vec::new();
    for q in labelled {
        report.num_queries += 1;
        let hits = match retriever.retrieve(&q.product_id, &q.query_text, k) {
            Ok(h) => h,
            Err(Error::UnknownProduct(_)) => Vec::new(),
            Err(e) => return Err(e),
        };
        if hits.is_empty() {
            report.uncovered_queries += 1;
        }
        let labels = q.relevance_labels.as_ref().expect("filtered above");
        let mut relevant = 0;
        for (qa_id, score) in &hits {
            match labels.get(qa_id) {
                Some(r) => {
                    let rel = *r == Relevance::Relevant;
                    relevant += rel as usize;
                    pooled.push((*score, rel));
                }
                None => report.unlabeled_pairs += 1,
            }
        }
        report.per_query.push(QueryDetail {
            id: q.query_id.clone(),
            product_id: q.product_id.clone(),
            p_at_1: None,
            average_precision: None,
            reciprocal_rank: None,
            responses: Some(hits.len()),
            relevant_responses: Some(relevant),
        });
    }
    report.num_pairs = pooled.len();
    if pooled.is_empty() {
        return Err(Error::NoResponses {
            uncovered: report.uncovered_queries,
        });
    }
    let positives = pooled.iter().filter(|p| p.1).count();
    report.pr_auc = Some(if positives == pooled.len() {
        1.0
    } else if positives == 0 {
        0.0
    } else {
        pr_auc(&pooled)?
    });
    Ok(report)
}
