//! Read-only HTTP front end over a loaded index and encoder.
//!
//! The listener is bound before artifacts are loaded; until [`AppState::set`]
//! is called every answer request and `/healthz` return 503.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use semqa_core::corpus::Product;
use semqa_core::encoder::{CountingEmbed, EncoderParams, TextEncoder};
use semqa_core::index::{load_index, query_topk, SemanticIndex};
use semqa_core::text::Vocabulary;
use semqa_core::Error;

pub const DEFAULT_K: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerItem {
    pub qa_id: String,
    pub question: Option<String>,
    pub answer: Option<String>,
    /// Negated distance; higher is better.
    pub relevance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerResponse {
    pub query: String,
    pub product_id: String,
    pub results: Vec<AnswerItem>,
    pub latency_ms: f64,
    pub encoder_calls: usize,
}

/// Everything needed to answer queries; immutable once built.
pub struct Engine {
    index: SemanticIndex,
    encoder: TextEncoder,
    texts: HashMap<(String, String), (String, String)>,
}

impl Engine {
    /// `corpus`, when given, supplies question and answer texts for results.
    pub fn new(index: SemanticIndex, encoder: TextEncoder, corpus: Option<&[Product]>) -> semqa_core::Result<Self> {
        if index.verify(encoder.params(), encoder.vocab())? {
            tracing::debug!("index fingerprints match");
        }
        let texts = corpus
            .into_iter()
            .flatten()
            .flat_map(|p| {
                p.pairs
                    .iter()
                    .map(|x| ((p.product_id.clone(), x.qa_id.clone()), (x.question.clone(), x.answer.clone())))
            })
            .collect();
        Ok(Self { index, encoder, texts })
    }

    pub fn load(index: &Path, params: &Path, vocab: &Path, corpus: Option<&[Product]>) -> semqa_core::Result<Self> {
        let index = load_index(index)?;
        let params = EncoderParams::load(params)?;
        let vocab = Vocabulary::load(vocab)?;
        Self::new(index, TextEncoder::new(params, vocab)?, corpus)
    }

    pub fn index(&self) -> &SemanticIndex {
        &self.index
    }

    pub fn encoder(&self) -> &TextEncoder {
        &self.encoder
    }

    pub fn answer(&self, product_id: &str, query: &str, k: usize) -> semqa_core::Result<AnswerResponse> {
        let started = Instant::now();
        let counter = CountingEmbed::new(&self.encoder);
        let hits = query_topk(&self.index, &counter, product_id, query, k)?;
        let results = hits
            .into_iter()
            .map(|(qa_id, distance)| {
                let text = self.texts.get(&(product_id.to_string(), qa_id.clone()));
                AnswerItem {
                    question: text.map(|t| t.0.clone()),
                    answer: text.map(|t| t.1.clone()),
                    qa_id,
                    relevance: -distance,
                }
            })
            .collect();
        Ok(AnswerResponse {
            query: query.to_string(),
            product_id: product_id.to_string(),
            results,
            latency_ms: started.elapsed().as_secs_f64() * 1000.0,
            encoder_calls: counter.calls(),
        })
    }
}

#[derive(Default)]
pub struct AppState {
    engine: OnceLock<Engine>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn loaded(engine: Engine) -> Self {
        let state = Self::new();
        state.set(engine);
        state
    }

    /// Installs the engine. Later calls are ignored.
    pub fn set(&self, engine: Engine) {
        if self.engine.set(engine).is_err() {
            tracing::warn!("engine already loaded; ignoring second load");
        }
    }

    pub fn engine(&self) -> Option<&Engine> {
        self.engine.get()
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

async fn answers(State(state): State<Arc<AppState>>, Query(params): Query<HashMap<String, String>>) -> Response {
    let Some(engine) = state.engine() else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "index not loaded yet");
    };
    let Some(product_id) = params.get("product_id").filter(|s| !s.is_empty()) else {
        return error(StatusCode::BAD_REQUEST, "missing product_id");
    };
    let Some(q) = params.get("q").filter(|s| !s.trim().is_empty()) else {
        return error(StatusCode::BAD_REQUEST, "missing q");
    };
    let k = match params.get("k").map(|s| s.parse::<usize>()) {
        None => DEFAULT_K,
        Some(Ok(k)) if k >= 1 => k,
        Some(_) => return error(StatusCode::BAD_REQUEST, "k must be a positive integer"),
    };
    let tokens = semqa_core::text::tokenize(q).len();
    match engine.answer(product_id, q, k) {
        Ok(resp) => {
            tracing::info!(product_id = %product_id, tokens, latency_ms = resp.latency_ms, "answer");
            Json(resp).into_response()
        }
        Err(Error::UnknownProduct(p)) => {
            tracing::info!(product_id = %p, tokens, status = 404, "unknown product");
            error(StatusCode::NOT_FOUND, format!("unknown product {p:?}"))
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub products: usize,
    pub candidates: usize,
    pub dim: usize,
    pub alpha: f32,
    pub encoder_fingerprint: String,
    pub vocab_fingerprint: String,
}

async fn healthz(State(state): State<Arc<AppState>>) -> Response {
    let Some(engine) = state.engine() else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "loading");
    };
    let idx = engine.index();
    Json(Health {
        status: "ok".into(),
        products: idx.num_products(),
        candidates: idx.len(),
        dim: idx.dim,
        alpha: idx.alpha,
        encoder_fingerprint: format!("{:016x}", idx.encoder_fingerprint),
        vocab_fingerprint: format!("{:016x}", idx.vocab_fingerprint),
    })
    .into_response()
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/answers", get(answers))
        .route("/healthz", get(healthz))
        .with_state(state)
}
