//! Instant question answering over product-page community Q&A.
//!
//! The crate is organised bottom-up:
//!
//! - [`corpus`]: products, CQA pairs, user-query logs, JSONL IO and a
//!   deterministic synthetic generator.
//! - [`text`]: tokenizer and vocabulary with a hashed character-trigram
//!   fallback for out-of-vocabulary tokens.
//! - [`bm25`]: exact per-product BM25, used both as a baseline and as the
//!   teacher for distantly supervised triplets.
//! - [`encoder`]: token embedding lookup, optional single attention layer,
//!   mean pooling.
//! - [`training`]: triplet sampling, triplet loss with analytic gradients,
//!   data-mix and multi-task training loops.
//! - [`index`]: fused one-vector-per-pair candidate index with exact
//!   per-product top-k.
//! - [`eval`]: ranking metrics and the two offline evaluation protocols.

pub mod bm25;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod index;
pub mod text;
pub mod training;

pub use error::{Error, Result};
