//! Triplet construction from CQA pairs and from teacher-labelled user queries.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bm25::Bm25Ranker;
use crate::corpus::{Product, UserQueryRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TripletSource {
    #[serde(rename = "CQA")]
    Cqa,
    #[serde(rename = "DISTANT")]
    Distant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: String,
    pub positive: String,
    pub negative: String,
    pub source: TripletSource,
    /// Negative drawn from the anchor's own product.
    pub hard: bool,
}

fn check_fractions(negatives_per_positive: usize, hard_negative_fraction: f64) -> Result<()> {
    if negatives_per_positive == 0 {
        return Err(Error::InvalidConfig("negatives_per_positive must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&hard_negative_fraction) {
        return Err(Error::InvalidConfig(format!(
            "hard_negative_fraction must be in [0, 1], got {hard_negative_fraction}"
        )));
    }
    Ok(())
}

/// Draws up to `count` negatives for the pair `pos_idx` of `products[prod_idx]`.
///
/// Hard negatives are answers of other pairs on the same product whose
/// question and answer both differ from the positive pair. Easy negatives are
/// answers from other products. A shortfall on one side is filled from the
/// other; the result is shorter than `count` only when both run out.
fn pick_negatives(
    products: &[Product],
    prod_idx: usize,
    pos_idx: usize,
    count: usize,
    hard_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<(String, bool)> {
    let product = &products[prod_idx];
    let pos = &product.pairs[pos_idx];
    let hard_pool: Vec<usize> = (0..product.pairs.len())
        .filter(|&j| {
            let p = &product.pairs[j];
            j != pos_idx && p.question != pos.question && p.answer != pos.answer
        })
        .collect();
    let other_products: Vec<usize> = (0..products.len())
        .filter(|&i| i != prod_idx && !products[i].pairs.is_empty())
        .collect();

    let want_hard = (count as f64 * hard_fraction).round() as usize;
    let mut n_hard = want_hard.min(hard_pool.len());
    if other_products.is_empty() {
        n_hard = count.min(hard_pool.len());
    }
    let n_easy = if other_products.is_empty() { 0 } else { count - n_hard };

    let mut out = Vec::with_capacity(n_hard + n_easy);
    for k in index::sample(rng, hard_pool.len(), n_hard) {
        out.push((product.pairs[hard_pool[k]].answer.clone(), true));
    }
    for _ in 0..n_easy {
        let other = &products[other_products[rng.gen_range(0..other_products.len())]];
        let pair = &other.pairs[rng.gen_range(0..other.pairs.len())];
        out.push((pair.answer.clone(), false));
    }
    out
}

/// Every CQA question becomes an anchor with its own answer as positive.
/// Anchors are visited in a seeded shuffle across products.
pub fn sample_cqa_triplets(
    products: &[Product],
    negatives_per_positive: usize,
    hard_negative_fraction: f64,
    seed: u64,
) -> Result<Vec<Triplet>> {
    check_fractions(negatives_per_positive, hard_negative_fraction)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut anchors: Vec<(usize, usize)> = products
        .iter()
        .enumerate()
        .flat_map(|(i, p)| (0..p.pairs.len()).map(move |j| (i, j)))
        .collect();
    anchors.shuffle(&mut rng);

    let mut triplets = Vec::new();
    for (i, j) in anchors {
        let pair = &products[i].pairs[j];
        for (negative, hard) in pick_negatives(products, i, j, negatives_per_positive, hard_negative_fraction, &mut rng) {
            triplets.push(Triplet {
                anchor: pair.question.clone(),
                positive: pair.answer.clone(),
                negative,
                source: TripletSource::Cqa,
                hard,
            });
        }
    }
    if triplets.is_empty() {
        return Err(Error::InsufficientData(
            "no valid negative exists: need two products or a product with two distinct pairs".into(),
        ));
    }
    Ok(triplets)
}

/// User queries paired with the teacher's top answer. A stored
/// `teacher_qa_id` takes precedence over running BM25; queries on which the
/// teacher abstains, or whose product is unknown, are skipped.
pub fn generate_distant_triplets(
    products: &[Product],
    query_log: &[UserQueryRecord],
    teacher: &Bm25Ranker,
    negatives_per_positive: usize,
    hard_negative_fraction: f64,
    seed: u64,
) -> Result<Vec<Triplet>> {
    check_fractions(negatives_per_positive, hard_negative_fraction)?;
    if query_log.is_empty() {
        return Err(Error::InsufficientData("query log is empty".into()));
    }
    let by_id: HashMap<&str, usize> = products.iter().enumerate().map(|(i, p)| (p.product_id.as_str(), i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triplets = Vec::new();
    let mut skipped = 0usize;
    for record in query_log {
        let Some(&prod_idx) = by_id.get(record.product_id.as_str()) else {
            skipped += 1;
            continue;
        };
        let product = &products[prod_idx];
        let teacher_id = match &record.teacher_qa_id {
            Some(id) => Some(id.clone()),
            None => teacher
                .topk(&record.product_id, &record.query_text, 1)
                .into_iter()
                .next()
                .map(|(id, _)| id),
        };
        let Some(pos_idx) = teacher_id.and_then(|id| product.pairs.iter().position(|p| p.qa_id == id)) else {
            skipped += 1;
            continue;
        };
        if record.query_text.trim().is_empty() {
            skipped += 1;
            continue;
        }
        let positive = &product.pairs[pos_idx].answer;
        for (negative, hard) in
            pick_negatives(products, prod_idx, pos_idx, negatives_per_positive, hard_negative_fraction, &mut rng)
        {
            triplets.push(Triplet {
                anchor: record.query_text.clone(),
                positive: positive.clone(),
                negative,
                source: TripletSource::Distant,
                hard,
            });
        }
    }
    if skipped > 0 {
        tracing::info!(skipped, total = query_log.len(), "queries without a teacher answer");
    }
    Ok(triplets)
}

pub fn save_triplets(path: impl AsRef<Path>, triplets: &[Triplet]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for t in triplets {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_triplets(path: impl AsRef<Path>) -> Result<Vec<Triplet>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut triplets = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Triplet = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if t.anchor.trim().is_empty() || t.positive.trim().is_empty() || t.negative.trim().is_empty() {
            return Err(Error::InvalidRecord {
                line: n + 1,
                message: "triplet texts must be non-empty".into(),
            });
        }
        triplets.push(t);
    }
    Ok(triplets)
}
