//! Command line interface: argument definitions and dispatch.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use semqa_core::bm25::Bm25Ranker;
use semqa_core::corpus::{
    corpus_stats, generate_synthetic_corpus, load_corpus, load_query_log, save_corpus, save_query_log, split_queries,
    Product, SynthConfig,
};
use semqa_core::encoder::{EncoderParams, TextEncoder};
use semqa_core::eval::{run_cqa_eval, run_user_query_eval, Bm25CqaScorer, EmbedCqaScorer, IndexRetriever, DEFAULT_MIN_PAIRS};
use semqa_core::index::{build_index, load_index, save_index};
use semqa_core::text::{Vocabulary, DEFAULT_MIN_FREQ, DEFAULT_NUM_HASH_BUCKETS};
use semqa_core::training::{
    generate_distant_triplets, load_triplets, sample_cqa_triplets, save_triplets, train, LrSchedule, Optimizer, Strategy,
    TrainConfig, TripletSource,
};

use crate::server::{router, AppState, Engine};

const CORPUS_FILE: &str = "corpus.jsonl";

#[derive(Debug, Parser)]
#[command(name = "semqa", version, about = "Instant answers from product-page Q&A")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus (and optional query log) and write a working set.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic corpus and labelled query log.
    GenSynthetic {
        #[arg(long, default_value_t = 200)]
        products: usize,
        #[arg(long, default_value_t = 8)]
        pairs: usize,
        #[arg(long, default_value_t = 2000)]
        queries: usize,
        #[arg(long, default_value_t = 0.6)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Share of queries written to queries.test.jsonl.
        #[arg(long, default_value_t = 0.5)]
        test_frac: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample triplets from CQA pairs.
    GenTriplets {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 2)]
        negatives: usize,
        #[arg(long, default_value_t = 0.5)]
        hard_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label user queries with the BM25 teacher and emit triplets.
    GenDistant {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 0.4)]
        alpha: f64,
        #[arg(long, default_value_t = 2)]
        negatives: usize,
        #[arg(long, default_value_t = 0.5)]
        hard_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train encoder parameters on triplet files.
    Train(TrainArgs),
    /// Encode every CQA pair into a fused index. Alpha is fixed at build time.
    BuildIndex {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, default_value_t = 0.4)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the top answers for one query.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        product: String,
        #[arg(long)]
        q: String,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// Offline evaluation.
    Eval {
        #[arg(value_enum)]
        protocol: Protocol,
        #[command(flatten)]
        args: EvalArgs,
    },
    /// Serve answers over HTTP.
    Serve {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Overridden by SEMQA_PORT when set.
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    Cqa,
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    DataMix,
    MultiTask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Bm25,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub cqa: PathBuf,
    #[arg(long)]
    pub distant: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "data-mix")]
    pub strategy: StrategyArg,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "off")]
    pub attention: OnOff,
    #[arg(long, value_enum, default_value = "sgd")]
    pub optimizer: OptimizerArg,
    /// Linear warmup steps followed by linear decay; 0 keeps the rate constant.
    #[arg(long, default_value_t = 0)]
    pub warmup: usize,
    /// Reuse an existing vocabulary instead of building one from the triplets.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MIN_FREQ)]
    pub min_freq: usize,
    #[arg(long, default_value_t = DEFAULT_NUM_HASH_BUCKETS)]
    pub buckets: usize,
    /// Where to write the training report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, required_unless_present = "baseline")]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Prebuilt index for the user protocol; built in memory otherwise.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    /// Query log for the user protocol; defaults to queries.test.jsonl or
    /// queries.jsonl next to the corpus.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long, default_value_t = 0.4)]
    pub alpha: f64,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_PAIRS)]
    pub min_pairs: usize,
    #[arg(long, default_value_t = 2000)]
    pub sample: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// A corpus argument may name the JSONL file or a directory holding
/// `corpus.jsonl`.
pub fn corpus_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(CORPUS_FILE)
    } else {
        path.to_path_buf()
    }
}

fn corpus_dir(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

fn read_corpus(path: &Path) -> Result<Vec<Product>> {
    let file = corpus_file(path);
    Ok(load_corpus(&file).with_context(|| format!("loading corpus {}", file.display()))?)
}

/// Vocabulary written next to a params file by `train`.
pub fn default_vocab_path(params: &Path) -> PathBuf {
    let mut name = params.as_os_str().to_owned();
    name.push(".vocab.json");
    PathBuf::from(name)
}

fn load_encoder(params: &Path, vocab: Option<&Path>) -> Result<TextEncoder> {
    let vocab_path = vocab.map_or_else(|| default_vocab_path(params), Path::to_path_buf);
    let params = EncoderParams::load(params)?;
    let vocab = Vocabulary::load(&vocab_path).with_context(|| format!("loading vocabulary {}", vocab_path.display()))?;
    Ok(TextEncoder::new(params, vocab)?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { corpus, queries, out } => {
            let products = read_corpus(&corpus)?;
            std::fs::create_dir_all(&out)?;
            let records = match queries {
                Some(q) => {
                    let log = load_query_log(&q, &products)?;
                    save_query_log(out.join("queries.jsonl"), &log.records)?;
                    log.records
                }
                None => Vec::new(),
            };
            save_corpus(out.join(CORPUS_FILE), &products)?;
            let stats = corpus_stats(&products, &records);
            write_json(&out.join("stats.json"), &stats)?;
            println!("{}", serde_json::to_string(&stats)?);
        }
        Command::GenSynthetic {
            products,
            pairs,
            queries,
            noise,
            seed,
            test_frac,
            out,
        } => {
            let config = SynthConfig {
                num_products: products,
                pairs_per_product: pairs,
                num_queries: queries,
                noise_level: noise,
                seed,
            };
            let (products, records) = generate_synthetic_corpus(&config)?;
            let (train_q, test_q) = split_queries(&records, test_frac, seed)?;
            std::fs::create_dir_all(&out)?;
            save_corpus(out.join(CORPUS_FILE), &products)?;
            save_query_log(out.join("queries.jsonl"), &records)?;
            save_query_log(out.join("queries.train.jsonl"), &train_q)?;
            save_query_log(out.join("queries.test.jsonl"), &test_q)?;
            let stats = corpus_stats(&products, &records);
            write_json(&out.join("stats.json"), &stats)?;
            println!("{}", serde_json::to_string(&stats)?);
        }
        Command::GenTriplets {
            corpus,
            negatives,
            hard_frac,
            seed,
            out,
        } => {
            let products = read_corpus(&corpus)?;
            let triplets = sample_cqa_triplets(&products, negatives, hard_frac, seed)?;
            save_triplets(&out, &triplets)?;
            eprintln!("wrote {} triplets to {}", triplets.len(), out.display());
        }
        Command::GenDistant {
            corpus,
            queries,
            alpha,
            negatives,
            hard_frac,
            seed,
            out,
        } => {
            let products = read_corpus(&corpus)?;
            let log = load_query_log(&queries, &products)?;
            let teacher = Bm25Ranker::new(&products, alpha);
            let triplets = generate_distant_triplets(&products, &log.records, &teacher, negatives, hard_frac, seed)?;
            save_triplets(&out, &triplets)?;
            eprintln!("wrote {} triplets to {}", triplets.len(), out.display());
        }
        Command::Train(args) => run_train(args)?,
        Command::BuildIndex {
            corpus,
            params,
            vocab,
            alpha,
            out,
        } => {
            let products = read_corpus(&corpus)?;
            let encoder = load_encoder(&params, vocab.as_deref())?;
            let index = build_index(&products, encoder.params(), encoder.vocab(), alpha)?;
            save_index(&index, &out)?;
            eprintln!("indexed {} pairs of {} products", index.len(), index.num_products());
        }
        Command::Query {
            index,
            params,
            vocab,
            corpus,
            product,
            q,
            k,
        } => {
            let corpus = corpus.map(|c| read_corpus(&c)).transpose()?;
            let engine = Engine::new(load_index(&index)?, load_encoder(&params, vocab.as_deref())?, corpus.as_deref())?;
            let resp = engine.answer(&product, &q, k)?;
            println!("{:<5} {:<20} {:>10}  question", "rank", "qa_id", "relevance");
            for (i, r) in resp.results.iter().enumerate() {
                println!("{:<5} {:<20} {:>10.4}  {}", i + 1, r.qa_id, r.relevance, r.question.as_deref().unwrap_or("-"));
            }
        }
        Command::Eval { protocol, args } => run_eval(protocol, args)?,
        Command::Serve {
            index,
            params,
            vocab,
            corpus,
            host,
            port,
        } => {
            let port = match std::env::var("SEMQA_PORT") {
                Ok(p) => p.parse().with_context(|| format!("SEMQA_PORT={p:?} is not a port"))?,
                Err(_) => port,
            };
            let vocab = vocab.unwrap_or_else(|| default_vocab_path(&params));
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(serve(host, port, index, params, vocab, corpus))?;
        }
    }
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let cqa = load_triplets(&args.cqa)?;
    let distant = args.distant.as_deref().map(load_triplets).transpose()?.unwrap_or_default();
    let vocab = match &args.vocab {
        Some(path) => Vocabulary::load(path)?,
        None => {
            // CQA-side texts only: user-query wording is left to the
            // hashed trigram buckets.
            let texts: Vec<&str> = cqa
                .iter()
                .chain(&distant)
                .flat_map(|t| {
                    let anchor = (t.source == TripletSource::Cqa).then_some(t.anchor.as_str());
                    anchor.into_iter().chain([t.positive.as_str(), t.negative.as_str()])
                })
                .collect();
            Vocabulary::build(&texts, args.min_freq, args.buckets)?
        }
    };
    let config = TrainConfig {
        margin: args.margin,
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: args.batch_size,
        strategy: match args.strategy {
            StrategyArg::DataMix => Strategy::DataMix,
            StrategyArg::MultiTask => Strategy::MultiTask,
        },
        seed: args.seed,
        optimizer: match args.optimizer {
            OptimizerArg::Sgd => Optimizer::Sgd,
            OptimizerArg::Adam => Optimizer::adam(),
        },
        schedule: if args.warmup == 0 {
            LrSchedule::Constant
        } else {
            LrSchedule::WarmupLinearDecay { warmup_steps: args.warmup }
        },
        ..TrainConfig::default()
    };
    let init = EncoderParams::init(&vocab, args.dim, args.attention == OnOff::On, args.seed)?;
    let (params, report) = train(&init, &vocab, &cqa, &distant, &config)?;
    params.save(&args.out)?;
    vocab.save(default_vocab_path(&args.out))?;
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    eprintln!(
        "trained {} steps, final violation rate {:.4}, last epoch loss {}",
        report.steps,
        report.final_violation_rate,
        report.epoch_losses.last().map_or("-".to_string(), |l| format!("{l:.4}"))
    );
    Ok(())
}

fn run_eval(protocol: Protocol, args: EvalArgs) -> Result<()> {
    let products = read_corpus(&args.corpus)?;
    let encoder = match (&args.baseline, &args.params) {
        (Some(_), _) => None,
        (None, Some(p)) => Some(load_encoder(p, args.vocab.as_deref())?),
        (None, None) => bail!("--params is required unless --baseline is given"),
    };
    let model = match (&args.baseline, &args.params) {
        (Some(Baseline::Bm25), _) => "bm25".to_string(),
        (None, Some(p)) => p.file_name().map_or("model".into(), |n| n.to_string_lossy().into_owned()),
        (None, None) => unreachable!("checked above"),
    };
    let report = match protocol {
        Protocol::Cqa => match &encoder {
            None => {
                let ranker = Bm25Ranker::new(&products, args.alpha);
                run_cqa_eval(&model, &products, &Bm25CqaScorer(&ranker), args.min_pairs, args.sample, args.seed)?
            }
            Some(enc) => run_cqa_eval(&model, &products, &EmbedCqaScorer(enc), args.min_pairs, args.sample, args.seed)?,
        },
        Protocol::User => {
            let queries_path = match &args.queries {
                Some(q) => q.clone(),
                None => {
                    let dir = corpus_dir(&args.corpus);
                    let test = dir.join("queries.test.jsonl");
                    if test.exists() {
                        test
                    } else {
                        dir.join("queries.jsonl")
                    }
                }
            };
            let log = load_query_log(&queries_path, &products)?;
            match &encoder {
                None => run_user_query_eval(&model, &Bm25Ranker::new(&products, args.alpha), &log.records, args.k)?,
                Some(enc) => {
                    let index = match &args.index {
                        Some(p) => {
                            let index = load_index(p)?;
                            index.verify(enc.params(), enc.vocab())?;
                            index
                        }
                        None => build_index(&products, enc.params(), enc.vocab(), args.alpha)?,
                    };
                    let retriever = IndexRetriever {
                        index: &index,
                        encoder: enc,
                    };
                    run_user_query_eval(&model, &retriever, &log.records, args.k)?
                }
            }
        }
    };
    report.save(&args.out)?;
    let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    println!(
        "{} {:?}: p@1 {} map {} mrr {} pr_auc {} (queries {}, uncovered {})",
        report.model,
        protocol,
        show(report.p_at_1),
        show(report.map),
        show(report.mrr),
        show(report.pr_auc),
        report.num_queries,
        report.uncovered_queries
    );
    Ok(())
}

async fn serve(host: String, port: u16, index: PathBuf, params: PathBuf, vocab: PathBuf, corpus: Option<PathBuf>) -> Result<()> {
    let listener = tokio::net::TcpListener::bind((host.as_str(), port))
        .await
        .with_context(|| format!("binding {host}:{port}"))?;
    let state = Arc::new(AppState::new());
    tracing::info!(addr = %listener.local_addr()?, "listening; loading artifacts");

    let loader = {
        let state = state.clone();
        tokio::task::spawn_blocking(move || -> Result<()> {
            let corpus = corpus.map(|c| read_corpus(&c)).transpose()?;
            let engine = Engine::load(&index, &params, &vocab, corpus.as_deref())?;
            tracing::info!(candidates = engine.index().len(), products = engine.index().num_products(), "ready");
            state.set(engine);
            Ok(())
        })
    };
    let server = axum::serve(listener, router(state)).with_graceful_shutdown(async {
        let _ = tokio::signal::ctrl_c().await;
    });
    let server = tokio::spawn(async move { server.await });
    loader.await??;
    server.await??;
    Ok(())
}
