//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Built with `harness = false`, so `cargo test` runs `main`.

use std::cell::RefCell;
use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semqa_core::bm25::{bm25_score, Bm25ProductStats, Bm25Ranker};
use semqa_core::corpus::{
    generate_synthetic_corpus, has_zero_overlap, split_products, split_queries, CqaPair, Product, SynthConfig,
    UserQueryRecord,
};
use semqa_core::encoder::{EncoderParams, TextEncoder};
use semqa_core::eval::{
    average_precision, reciprocal_rank_paper, run_cqa_eval, run_user_query_eval, Bm25CqaScorer, EmbedCqaScorer,
    EvalReport, IndexRetriever, DEFAULT_MIN_PAIRS,
};
use semqa_core::index::{build_index, load_index, save_index, score, FusedCandidate, SemanticIndex};
use semqa_core::text::Vocabulary;
use semqa_core::training::{
    generate_distant_triplets, hinge_activation, loss_gradient, sample_cqa_triplets, train, triplet_loss, Strategy,
    TrainConfig, TrainReport, Triplet, TripletSource,
};
use semqa_core::Error;
use semqa_service::server::{router, AnswerResponse, AppState, Engine};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 9] = [
        ("fused score equals two-distance score", Duration::from_secs(5), fused_equivalence),
        ("analytic gradients match finite differences", Duration::from_secs(30), gradient_check),
        ("bm25 matches brute force", Duration::from_secs(60), bm25_oracle),
        ("metric oracles", Duration::from_secs(60), metric_oracles),
        ("training converges on separable triplets", Duration::from_secs(120), convergence),
        ("distant supervision helps on noisy queries", Duration::from_secs(900), directional),
        ("fused index halves storage", Duration::from_secs(60), storage),
        ("determinism and persistence", Duration::from_secs(120), determinism),
        ("serving contract", Duration::from_secs(120), serving),
    ];
    let mut failures = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(d) if elapsed > *limit => Err(format!("{d}; over the {:?} budget", limit)),
            other => other,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} criterion {}: {name} [{:.2}s] {detail}", i + 1, elapsed.as_secs_f64());
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}

fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn fused_equivalence() -> Outcome {
    let dim = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut rankings_checked = 0;
    let mut mismatched = 0;
    for alpha_case in 0..4 {
        let alpha = match alpha_case {
            0 => 0.0,
            1 => 0.4,
            2 => 1.0,
            _ => rng.gen_range(0.0..=1.0),
        };
        for _ in 0..1000 {
            let (v, eq, ea) = (random_vec(&mut rng, dim), random_vec(&mut rng, dim), random_vec(&mut rng, dim));
            let direct = alpha * sq_dist(&v, &eq) + (1.0 - alpha) * sq_dist(&v, &ea);
            let fused = score(&v, &FusedCandidate::from_vectors("p", "q", &eq, &ea, alpha)).unwrap();
            worst = worst.max((fused - direct).abs() / direct.abs().max(1e-12));
        }
        for _ in 0..20 {
            let v = random_vec(&mut rng, dim);
            let mut direct = Vec::new();
            let mut fused = Vec::new();
            for c in 0..50 {
                let (eq, ea) = (random_vec(&mut rng, dim), random_vec(&mut rng, dim));
                direct.push((alpha * sq_dist(&v, &eq) + (1.0 - alpha) * sq_dist(&v, &ea), c));
                fused.push((score(&v, &FusedCandidate::from_vectors("p", "q", &eq, &ea, alpha)).unwrap(), c));
            }
            direct.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            fused.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            rankings_checked += 1;
            if direct.iter().map(|x| x.1).ne(fused.iter().map(|x| x.1)) {
                mismatched += 1;
            }
        }
    }
    check(
        worst <= 1e-5 && mismatched == 0,
        format!("max relative error {worst:.2e}; {mismatched}/{rankings_checked} rankings differ"),
    )
}

fn fd_texts(rng: &mut ChaCha8Rng) -> String {
    let words = ["red", "blue", "size", "fits", "battery", "life", "weight", "light", "zzq", "unseen"];
    let n = rng.gen_range(1..5);
    (0..n).map(|_| *words.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// Worst per-element relative error between central differences and the
/// analytic gradient, or `None` when a triplet sits near the hinge kink.
fn fd_error(params: &EncoderParams, vocab: &Vocabulary, batch: &[Triplet], margin: f64) -> Option<f64> {
    let h = 1e-4;
    if batch.iter().any(|t| hinge_activation(params, vocab, t, margin).abs() < 1e-3) {
        return None;
    }
    let loss = |p: &EncoderParams| batch.iter().map(|t| triplet_loss(p, vocab, t, margin)).sum::<f64>() / batch.len() as f64;
    let analytic = loss_gradient(params, vocab, batch, margin).grads;
    let mut worst: f64 = 0.0;
    let mut compare = |numeric: f64, exact: f64| {
        worst = worst.max((numeric - exact).abs() / numeric.abs().max(exact.abs()).max(1e-8));
    };
    for (&id, row) in &analytic.rows {
        for c in 0..params.dim {
            let mut plus = params.clone();
            plus.row_mut(id)[c] += h;
            let mut minus = params.clone();
            minus.row_mut(id)[c] -= h;
            compare((loss(&plus) - loss(&minus)) / (2.0 * h), row[c]);
        }
    }
    if let Some(att) = &analytic.attention {
        for m in 0..3 {
            for k in 0..params.dim * params.dim {
                let mut plus = params.clone();
                plus.attention.as_mut().unwrap().matrices_mut()[m][k] += h;
                let mut minus = params.clone();
                minus.attention.as_mut().unwrap().matrices_mut()[m][k] -= h;
                compare((loss(&plus) - loss(&minus)) / (2.0 * h), att.matrices()[m][k]);
            }
        }
    }
    Some(worst)
}

fn gradient_check() -> Outcome {
    let vocab = Vocabulary::build(&["red blue size fits battery life weight light"], 1, 32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = [0usize; 2];
    let mut skipped = 0;
    let mut worst: f64 = 0.0;
    for cfg in 0..60u64 {
        let attention = cfg % 2 == 1;
        let mut params = EncoderParams::init(&vocab, 6, attention, cfg).unwrap();
        // unit-scale embeddings keep the truncation error of the differences small
        params.embeddings.iter_mut().for_each(|x| *x *= 10.0);
        let batch: Vec<Triplet> = (0..3)
            .map(|_| Triplet {
                anchor: fd_texts(&mut rng),
                positive: fd_texts(&mut rng),
                negative: fd_texts(&mut rng),
                source: TripletSource::Cqa,
                hard: false,
            })
            .collect();
        match fd_error(&params, &vocab, &batch, 1.0) {
            Some(err) => {
                worst = worst.max(err);
                checked[attention as usize] += 1;
            }
            None => skipped += 1,
        }
    }
    check(
        worst <= 1e-4 && checked[0] + checked[1] >= 20 && checked[0] > 0 && checked[1] > 0,
        format!(
            "max relative error {worst:.2e}; configs checked: {} without attention, {} with, {skipped} skipped at the kink",
            checked[0], checked[1]
        ),
    )
}

fn bm25_brute_force(docs: &[Vec<&str>], query: &[&str], target: usize) -> f64 {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|d| d.len() as f64).sum::<f64>() / n;
    let doc = &docs[target];
    query
        .iter()
        .map(|term| {
            let m = docs.iter().filter(|d| d.contains(term)).count() as f64;
            let idf = ((n - m + 0.5) / (m + 0.5) + 1.0).ln();
            let tf = doc.iter().filter(|t| *t == term).count() as f64;
            idf * tf * (1.5 + 1.0) / (tf + 1.5 * (1.0 - 0.75 + 0.75 * doc.len() as f64 / avgdl))
        })
        .sum()
}

fn bm25_oracle() -> Outcome {
    let words = ["red", "blue", "green", "size", "fits", "battery", "charge"];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n_docs = rng.gen_range(1..=6);
        let docs: Vec<Vec<&str>> = (0..n_docs)
            .map(|_| (0..rng.gen_range(1..=8)).map(|_| *words.choose(&mut rng).unwrap()).collect())
            .collect();
        let ids: Vec<String> = (0..n_docs).map(|i| format!("d{i}")).collect();
        let joined: Vec<String> = docs.iter().map(|d| d.join(" ")).collect();
        let stats =
            Bm25ProductStats::from_docs(ids.iter().map(String::as_str).zip(joined.iter().map(String::as_str)), 1.5, 0.75);
        let query: Vec<&str> = (0..rng.gen_range(1..=4)).map(|_| *words.choose(&mut rng).unwrap()).collect();
        for (i, id) in ids.iter().enumerate() {
            let got = bm25_score(&stats, &query, id).map_err(|e| e.to_string())?;
            worst = worst.max((got - bm25_brute_force(&docs, &query, i)).abs());
        }
    }
    let hand = Bm25ProductStats::from_docs([("a", "battery good"), ("b", "size big")], 1.5, 0.75);
    let ln2 = bm25_score(&hand, &["battery"], "a").map_err(|e| e.to_string())?;
    check(
        worst <= 1e-9 && ln2 == 2f64.ln(),
        format!("max deviation {worst:.2e}; two-doc case {ln2:.6}"),
    )
}

fn metric_oracles() -> Outcome {
    // average precision from its definition: mean over relevant positions of
    // precision at that cutoff
    let mut ap_cases = 0;
    for len in 1..=6usize {
        for bits in 0u32..(1 << len) {
            let ranking: Vec<bool> = (0..len).map(|i| bits >> i & 1 == 1).collect();
            let got = average_precision(&ranking);
            if !ranking.contains(&true) {
                if got.is_ok() {
                    return Err(format!("{ranking:?} has no relevant entry but AP succeeded"));
                }
                continue;
            }
            let precisions: Vec<f64> = (0..len)
                .filter(|&i| ranking[i])
                .map(|i| ranking[..=i].iter().filter(|&&r| r).count() as f64 / (i + 1) as f64)
                .collect();
            let want = precisions.iter().sum::<f64>() / precisions.len() as f64;
            let got = got.map_err(|e| e.to_string())?;
            if (got - want).abs() > 1e-12 {
                return Err(format!("AP {ranking:?}: {got} vs {want}"));
            }
            ap_cases += 1;
        }
    }

    let mut rr_cases = 0;
    for relevant in 1u32..8 {
        let labels: Vec<bool> = (0..3).map(|i| relevant >> i & 1 == 1).collect();
        for order in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            let ranking: Vec<bool> = order.iter().map(|&i| labels[i]).collect();
            // everything above the first relevant entry is irrelevant
            let want = 1.0 / (ranking.iter().position(|&r| r).unwrap() + 1) as f64;
            let got = reciprocal_rank_paper(&ranking).map_err(|e| e.to_string())?;
            if got != want {
                return Err(format!("RR {ranking:?}: {got} vs {want}"));
            }
            rr_cases += 1;
        }
    }

    let products: Vec<Product> = (0..400)
        .map(|i| Product {
            product_id: format!("p{i:03}"),
            title: None,
            pairs: (0..5)
                .map(|j| CqaPair {
                    qa_id: format!("q{j}"),
                    question: format!("question {j} about item {i}"),
                    answer: format!("answer {j}"),
                })
                .collect(),
        })
        .collect();
    let rng = RefCell::new(ChaCha8Rng::seed_from_u64(5));
    let random = |p: &Product, _: &str| -> Vec<f64> { p.pairs.iter().map(|_| rng.borrow_mut().gen()).collect() };
    let report = run_cqa_eval("random", &products, &random, 5, 2000, 3).map_err(|e| e.to_string())?;
    let p1 = report.p_at_1.unwrap_or(f64::NAN);
    check(
        report.num_queries == 2000 && (p1 - 0.2).abs() <= 0.05,
        format!("{ap_cases} AP rankings, {rr_cases} RR orderings, random P@1 {p1:.3} over {} queries", report.num_queries),
    )
}

fn convergence() -> Outcome {
    let clusters = 20;
    let words_per_cluster = 8;
    let word = |c: usize, w: usize| format!("c{c}w{w}");
    let all_words: Vec<String> = (0..clusters).flat_map(|c| (0..words_per_cluster).map(move |w| word(c, w))).collect();
    let vocab = Vocabulary::build(&[all_words.join(" ")], 1, 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let phrase = |rng: &mut ChaCha8Rng, c: usize| {
        (0..2).map(|_| word(c, rng.gen_range(0..words_per_cluster))).collect::<Vec<_>>().join(" ")
    };
    let triplets: Vec<Triplet> = (0..2400)
        .map(|_| {
            let c = rng.gen_range(0..clusters);
            let other = (c + rng.gen_range(1..clusters)) % clusters;
            Triplet {
                anchor: phrase(&mut rng, c),
                positive: phrase(&mut rng, c),
                negative: phrase(&mut rng, other),
                source: TripletSource::Cqa,
                hard: false,
            }
        })
        .collect();
    let init = EncoderParams::init(&vocab, 32, false, 4).unwrap();
    let config = TrainConfig {
        epochs: 20,
        learning_rate: 0.2,
        seed: 4,
        ..Default::default()
    };
    let (_, report) = train(&init, &vocab, &triplets, &[], &config).map_err(|e| e.to_string())?;
    let losses = &report.epoch_losses;
    let tail = &losses[losses.len() / 2..];
    let monotone = tail.windows(2).all(|w| w[1] <= w[0]);
    check(
        report.final_violation_rate < 0.05 && monotone,
        format!(
            "{} triplets, violation rate {:.4}, last-half losses non-increasing: {monotone} ({:.4} -> {:.4})",
            triplets.len(),
            report.final_violation_rate,
            tail[0],
            tail[tail.len() - 1]
        ),
    )
}

struct DirectionalScores {
    pr_auc_all: f64,
    pr_auc_zero: f64,
    cqa: EvalReport,
}

fn pr_auc_or_zero(report: semqa_core::Result<EvalReport>) -> Result<f64, String> {
    match report {
        Ok(r) => Ok(r.pr_auc.unwrap_or(0.0)),
        Err(Error::NoResponses { .. }) => Ok(0.0),
        Err(e) => Err(e.to_string()),
    }
}

fn directional() -> Outcome {
    let (products, queries) = generate_synthetic_corpus(&SynthConfig {
        num_products: 200,
        pairs_per_product: 8,
        num_queries: 2000,
        noise_level: 0.6,
        seed: 42,
    })
    .map_err(|e| e.to_string())?;
    let (train_products, test_products) = split_products(&products, 0.2, 42).map_err(|e| e.to_string())?;
    let (train_queries, test_queries) = split_queries(&queries, 0.5, 42).map_err(|e| e.to_string())?;
    let zero_overlap: Vec<UserQueryRecord> =
        test_queries.iter().filter(|q| has_zero_overlap(q, &products)).cloned().collect();

    let texts: Vec<&str> = products
        .iter()
        .flat_map(|p| p.pairs.iter().flat_map(|x| [x.question.as_str(), x.answer.as_str()]))
        .collect();
    let vocab = Vocabulary::build(&texts, 2, 4096).map_err(|e| e.to_string())?;
    let teacher = Bm25Ranker::new(&products, 0.4);
    let cqa = sample_cqa_triplets(&train_products, 2, 0.5, 42).map_err(|e| e.to_string())?;
    let distant = generate_distant_triplets(&products, &train_queries, &teacher, 2, 0.5, 42).map_err(|e| e.to_string())?;
    let init = EncoderParams::init(&vocab, 64, false, 42).map_err(|e| e.to_string())?;
    let config = |strategy| TrainConfig {
        epochs: 30,
        learning_rate: 0.2,
        strategy,
        seed: 42,
        ..Default::default()
    };

    let evaluate = |params: EncoderParams| -> Result<DirectionalScores, String> {
        let index = build_index(&products, &params, &vocab, 0.4).map_err(|e| e.to_string())?;
        let encoder = TextEncoder::new(params, vocab.clone()).map_err(|e| e.to_string())?;
        let retriever = IndexRetriever { index: &index, encoder: &encoder };
        Ok(DirectionalScores {
            pr_auc_all: pr_auc_or_zero(run_user_query_eval("model", &retriever, &test_queries, 3))?,
            pr_auc_zero: pr_auc_or_zero(run_user_query_eval("model", &retriever, &zero_overlap, 3))?,
            cqa: run_cqa_eval("model", &test_products, &EmbedCqaScorer(&encoder), DEFAULT_MIN_PAIRS, 2000, 42)
                .map_err(|e| e.to_string())?,
        })
    };

    let bm25 = DirectionalScores {
        pr_auc_all: pr_auc_or_zero(run_user_query_eval("bm25", &teacher, &test_queries, 3))?,
        pr_auc_zero: pr_auc_or_zero(run_user_query_eval("bm25", &teacher, &zero_overlap, 3))?,
        cqa: run_cqa_eval("bm25", &test_products, &Bm25CqaScorer(&teacher), DEFAULT_MIN_PAIRS, 2000, 42)
            .map_err(|e| e.to_string())?,
    };
    let (cqa_params, _) = train(&init, &vocab, &cqa, &[], &config(Strategy::DataMix)).map_err(|e| e.to_string())?;
    let cqa_only = evaluate(cqa_params)?;
    let mut joint = Vec::new();
    for strategy in [Strategy::DataMix, Strategy::MultiTask] {
        let (params, _) = train(&init, &vocab, &cqa, &distant, &config(strategy)).map_err(|e| e.to_string())?;
        joint.push((strategy, evaluate(params)?));
    }

    let metrics = |r: &EvalReport| [r.p_at_1, r.map, r.mrr].map(|m| m.unwrap_or(0.0));
    let beats_bm25 = |r: &EvalReport| metrics(r).iter().zip(metrics(&bm25.cqa)).all(|(m, b)| *m > b);
    let mut ok = beats_bm25(&cqa_only.cqa);
    let describe = |name: &str, s: &DirectionalScores| {
        let [p, m, r] = metrics(&s.cqa);
        format!("{name} PR-AUC {:.3}/{:.3} CQA {p:.3}/{m:.3}/{r:.3}", s.pr_auc_all, s.pr_auc_zero)
    };
    let mut detail = vec![
        format!("{} test queries, {} with zero overlap", test_queries.len(), zero_overlap.len()),
        describe("bm25", &bm25),
        describe("cqa-only", &cqa_only),
    ];
    for (strategy, s) in &joint {
        ok &= s.pr_auc_all >= cqa_only.pr_auc_all + 0.03;
        ok &= bm25.pr_auc_zero < s.pr_auc_zero.min(cqa_only.pr_auc_zero);
        ok &= beats_bm25(&s.cqa);
        detail.push(describe(&format!("{strategy:?}"), s));
    }
    check(ok, detail.join("; "))
}

fn storage() -> Outcome {
    let dim = 64;
    let products: Vec<Product> = (0..500 / 8 + 1)
        .map(|p| Product {
            product_id: format!("p{p:04}"),
            title: None,
            pairs: (0..8)
                .filter(|q| p * 8 + q < 500)
                .map(|q| CqaPair {
                    qa_id: format!("p{p:04}-q{q}"),
                    question: format!("question {q}"),
                    answer: format!("answer {q}"),
                })
                .collect(),
        })
        .collect();
    let vocab = Vocabulary::build(&["question answer 0 1 2 3 4 5 6 7"], 1, 64).unwrap();
    let params = EncoderParams::init(&vocab, dim, false, 0).unwrap();
    let index = build_index(&products, &params, &vocab, 0.4).map_err(|e| e.to_string())?;
    let bytes = index.to_bytes().map_err(|e| e.to_string())?;
    let n = index.len();
    // per-candidate bytes, without the fixed header
    let fused = (bytes.len() - semqa_core::index::HEADER_LEN) as f64 / n as f64;
    let id_bytes = index.candidates().iter().map(|c| 4 + c.product_id.len() + c.qa_id.len()).sum::<usize>() as f64 / n as f64;
    let naive = id_bytes + 2.0 * 4.0 * dim as f64;
    let ratio = fused / naive;
    check(
        ratio <= 0.55 && n == 500,
        format!("{fused:.1} bytes per candidate vs {naive:.1} naive: {:.1}%", ratio * 100.0),
    )
}

fn small_pipeline(seed: u64) -> Result<(Vec<Product>, Vocabulary, EncoderParams, SemanticIndex, TrainReport), String> {
    let (products, queries) = generate_synthetic_corpus(&SynthConfig {
        num_products: 30,
        pairs_per_product: 6,
        num_queries: 120,
        noise_level: 0.3,
        seed,
    })
    .map_err(|e| e.to_string())?;
    let texts: Vec<&str> = products.iter().flat_map(|p| p.pairs.iter().map(|x| x.question.as_str())).collect();
    let vocab = Vocabulary::build(&texts, 2, 512).map_err(|e| e.to_string())?;
    let teacher = Bm25Ranker::new(&products, 0.4);
    let cqa = sample_cqa_triplets(&products, 2, 0.5, seed).map_err(|e| e.to_string())?;
    let distant = generate_distant_triplets(&products, &queries, &teacher, 2, 0.5, seed).map_err(|e| e.to_string())?;
    let init = EncoderParams::init(&vocab, 16, true, seed).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        epochs: 3,
        strategy: Strategy::MultiTask,
        seed,
        ..Default::default()
    };
    let (params, report) = train(&init, &vocab, &cqa, &distant, &config).map_err(|e| e.to_string())?;
    let index = build_index(&products, &params, &vocab, 0.4).map_err(|e| e.to_string())?;
    Ok((products, vocab, params, index, report))
}

fn strip_latency(mut r: AnswerResponse) -> AnswerResponse {
    r.latency_ms = 0.0;
    r
}

fn determinism() -> Outcome {
    let (products, vocab, params_a, index_a, report) = small_pipeline(11)?;
    let (_, _, params_b, index_b, _) = small_pipeline(11)?;
    let same_params = params_a.to_bytes() == params_b.to_bytes();
    let same_index = index_a.to_bytes().unwrap() == index_b.to_bytes().unwrap();

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (pp, vp, ip) = (dir.path().join("m.sqep"), dir.path().join("v.json"), dir.path().join("i.bin"));
    params_a.save(&pp).map_err(|e| e.to_string())?;
    vocab.save(&vp).map_err(|e| e.to_string())?;
    save_index(&index_a, &ip).map_err(|e| e.to_string())?;
    let params_round_trip = EncoderParams::load(&pp).map_err(|e| e.to_string())? == params_a
        && std::fs::read(&pp).unwrap() == params_a.to_bytes();
    let index_round_trip = load_index(&ip).map_err(|e| e.to_string())? == index_a
        && std::fs::read(&ip).unwrap() == index_a.to_bytes().unwrap();

    let answers = |engine: &Engine| -> Result<Vec<AnswerResponse>, String> {
        products
            .iter()
            .take(10)
            .flat_map(|p| ["battery life", "what colour is it", "is it waterproof"].map(|q| (p.product_id.clone(), q)))
            .map(|(pid, q)| engine.answer(&pid, q, 3).map(strip_latency).map_err(|e| e.to_string()))
            .collect()
    };
    let first = answers(&Engine::load(&ip, &pp, &vp, Some(&products)).map_err(|e| e.to_string())?)?;
    let second = answers(&Engine::load(&ip, &pp, &vp, Some(&products)).map_err(|e| e.to_string())?)?;
    let same_answers = first == second && !first.is_empty();
    check(
        same_params && same_index && params_round_trip && index_round_trip && same_answers,
        format!(
            "params identical {same_params}, index identical {same_index}, params round trip {params_round_trip}, \
             index round trip {index_round_trip}, {} answers identical across reloads {same_answers} ({} steps)",
            first.len(),
            report.steps
        ),
    )
}

fn http_get(addr: std::net::SocketAddr, path: &str) -> Result<(u16, String), String> {
    let mut stream = TcpStream::connect(addr).map_err(|e| e.to_string())?;
    write!(stream, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").map_err(|e| e.to_string())?;
    let mut raw = String::new();
    stream.read_to_string(&mut raw).map_err(|e| e.to_string())?;
    let status = raw.split_whitespace().nth(1).and_then(|s| s.parse().ok()).ok_or("bad status line")?;
    let body = raw.split_once("\r\n\r\n").ok_or("no body")?.1.to_string();
    Ok((status, body))
}

fn serving() -> Outcome {
    let dim = 64;
    let pairs: Vec<CqaPair> = (0..1000)
        .map(|i| CqaPair {
            qa_id: format!("q{i:04}"),
            question: format!("does model {i} have a long battery life and a {} finish", ["red", "blue", "matte"][i % 3]),
            answer: format!("yes it lasts {} hours on a single charge", i % 24),
        })
        .collect();
    let products = vec![Product {
        product_id: "big".into(),
        title: None,
        pairs,
    }];
    let texts: Vec<&str> = products[0].pairs.iter().flat_map(|p| [p.question.as_str(), p.answer.as_str()]).collect();
    let vocab = Vocabulary::build(&texts, 2, 4096).map_err(|e| e.to_string())?;
    let params = EncoderParams::init(&vocab, dim, true, 1).map_err(|e| e.to_string())?;
    let index = build_index(&products, &params, &vocab, 0.4).map_err(|e| e.to_string())?;
    let engine = Engine::new(index, TextEncoder::new(params, vocab).unwrap(), Some(&products)).map_err(|e| e.to_string())?;
    let state = Arc::new(AppState::loaded(engine));

    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
        .map_err(|e| e.to_string())?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    runtime.spawn(async move { axum::serve(listener, router(state)).await });

    let path = "/v1/answers?product_id=big&q=how%20long%20does%20the%20battery%20last&k=5";
    let mut slowest = Duration::ZERO;
    let mut calls_ok = true;
    for _ in 0..20 {
        let start = Instant::now();
        let (status, body) = http_get(addr, path)?;
        slowest = slowest.max(start.elapsed());
        let resp: AnswerResponse = serde_json::from_str(&body).map_err(|e| format!("{status}: {e}"))?;
        calls_ok &= status == 200 && resp.encoder_calls == 1 && resp.results.len() == 5;
    }

    let handles: Vec<_> = (0..100).map(|_| std::thread::spawn(move || http_get(addr, path))).collect();
    let mut bodies = Vec::new();
    for h in handles {
        let (status, body) = h.join().map_err(|_| "client thread panicked")??;
        if status != 200 {
            return Err(format!("concurrent request returned {status}"));
        }
        let resp: AnswerResponse = serde_json::from_str(&body).map_err(|e| e.to_string())?;
        calls_ok &= resp.encoder_calls == 1;
        bodies.push(strip_latency(resp));
    }
    let identical = bodies.iter().all(|b| *b == bodies[0]);
    runtime.shutdown_background();
    check(
        calls_ok && identical && slowest < Duration::from_millis(50),
        format!(
            "one encoder call per request {calls_ok}; slowest of 20 sequential requests {:.2} ms on 1000 candidates; \
             100 concurrent bodies identical {identical}",
            slowest.as_secs_f64() * 1e3
        ),
    )
}
