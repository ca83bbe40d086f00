
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semqa_core::bm25::{bm25_score, Bm25ProductStats};

/// Straight from the formula, recomputing every statistic per call.
fn brute_force(docs: &[Vec<&str>], query: &[&str], target: usize) -> f64 {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|d| d.len() as f64).sum::<f64>() / n;
    let doc = &docs[target];
    let mut score = 0.0;
    for term in query {
        let m = docs.iter().filter(|d| d.contains(term)).count() as f64;
        let idf = ((n - m + 0.5) / (m + 0.5) + 1.0).ln();
        let tf = doc.iter().filter(|t| *t == term).count() as f64;
        score += idf * tf * 2.5 / (tf + 1.5 * (1.0 - 0.75 + 0.75 * doc.len() as f64 / avgdl));
    }
    score
}

#[test]
fn random_tiny_corpora_match_brute_force() {
    let vocab = ["red", "blue", "green", "size", "fits", "battery"];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n_docs = rng.gen_range(1..=5);
        let docs: Vec<Vec<&str>> = (0..n_docs)
            .map(|_| (0..rng.gen_range(1..=8)).map(|_| vocab[rng.gen_range(0..vocab.len())]).collect())
            .collect();
        let ids: Vec<String> = (0..n_docs).map(|i| format!("d{i}")).collect();
        let joined: Vec<String> = docs.iter().map(|d| d.join(" ")).collect();
        let stats = Bm25ProductStats::from_docs(ids.iter().map(String::as_str).zip(joined.iter().map(String::as_str)), 1.5, 0.75);
        let query: Vec<&str> = (0..rng.gen_range(1..=4)).map(|_| vocab[rng.gen_range(0..vocab.len())]).collect();
        for (i, id) in ids.iter().enumerate() {
            let got = bm25_score(&stats, &query, id).unwrap();
            worst = worst.max((got - brute_force(&docs, &query, i)).abs());
        }
    }
    assert!(worst <= 1e-9, "max deviation {worst}");
}

#[test]
fn two_doc_hand_case_is_ln_2() {
    let stats = Bm25ProductStats::from_docs([("a", "battery good"), ("b", "size big")], 1.5, 0.75);
    let s = bm25_score(&stats, &["battery"], "a").unwrap();
    assert_eq!(s, 2f64.ln());
    assert_eq!(s, brute_force(&[vec!["battery", "good"], vec!["size", "big"]], &["battery"], 0));
}
