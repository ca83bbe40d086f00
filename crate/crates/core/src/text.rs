//! Tokenization and vocabulary.
//!
//! Word ids are dense in `[0, num_word_ids)`. Tokens missing from the
//! vocabulary are expanded into hashed character trigrams, which occupy
//! `[num_word_ids, num_word_ids + num_hash_buckets)`. The hash is FNV-1a
//! (64 bit) over the UTF-8 bytes of each trigram, so ids are stable across
//! runs and platforms.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_NUM_HASH_BUCKETS: usize = 4096;
pub const DEFAULT_MIN_FREQ: usize = 2;

const TRIGRAM_START: char = '^';
const TRIGRAM_END: char = '$';

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Character trigrams of `^token$`, in order, duplicates kept.
pub fn char_trigrams(token: &str) -> Vec<String> {
    let padded: Vec<char> = std::iter::once(TRIGRAM_START)
        .chain(token.chars())
        .chain(std::iter::once(TRIGRAM_END))
        .collect();
    padded.windows(3).map(|w| w.iter().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    token_to_id: HashMap<String, u32>,
    num_hash_buckets: usize,
    min_freq: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    min_freq: usize,
    num_hash_buckets: usize,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary from raw texts. Ids are assigned by descending
    /// frequency, ties broken lexicographically.
    pub fn build<S: AsRef<str>>(texts: &[S], min_freq: usize, num_hash_buckets: usize) -> Result<Self> {
        if min_freq == 0 {
            return Err(Error::InvalidConfig("min_freq must be >= 1".into()));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in tokenize(text.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = kept.into_iter().map(|(t, _)| t).collect();
        Self::from_tokens(tokens, min_freq, num_hash_buckets)
    }

    pub fn from_tokens(tokens: Vec<String>, min_freq: usize, num_hash_buckets: usize) -> Result<Self> {
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if token_to_id.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self {
            tokens,
            token_to_id,
            num_hash_buckets,
            min_freq,
        })
    }

    pub fn num_word_ids(&self) -> usize {
        self.tokens.len()
    }

    pub fn num_hash_buckets(&self) -> usize {
        self.num_hash_buckets
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    /// Total number of embedding rows needed for this vocabulary.
    pub fn num_ids(&self) -> usize {
        self.tokens.len() + self.num_hash_buckets
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn word_id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn trigram_id(&self, trigram: &str) -> Option<u32> {
        if self.num_hash_buckets == 0 {
            return None;
        }
        let bucket = fnv1a64(trigram.as_bytes()) % self.num_hash_buckets as u64;
        Some((self.tokens.len() as u64 + bucket) as u32)
    }

    /// Bucket ids of the trigrams of `token`, regardless of whether the
    /// token is in the vocabulary.
    pub fn trigram_ids(&self, token: &str) -> Vec<u32> {
        char_trigrams(token)
            .iter()
            .filter_map(|g| self.trigram_id(g))
            .collect()
    }

    pub fn ids_for_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        let mut ids = Vec::with_capacity(tokens.len());
        for tok in tokens {
            let tok = tok.as_ref();
            match self.word_id(tok) {
                Some(id) => ids.push(id),
                None => ids.extend(self.trigram_ids(tok)),
            }
        }
        ids
    }

    pub fn token_ids(&self, text: &str) -> Vec<u32> {
        self.ids_for_tokens(&tokenize(text))
    }

    pub fn to_json(&self) -> String {
        let file = VocabularyFile {
            min_freq: self.min_freq,
            num_hash_buckets: self.num_hash_buckets,
            tokens: self.tokens.clone(),
        };
        serde_json::to_string(&file).expect("vocabulary serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: VocabularyFile = serde_json::from_str(s)?;
        Self::from_tokens(file.tokens, file.min_freq, file.num_hash_buckets)
    }

    /// Stable hash of the serialized vocabulary.
    pub fn fingerprint(&self) -> u64 {
        fnv1a64(self.to_json().as_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}
