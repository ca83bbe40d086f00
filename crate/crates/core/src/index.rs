//! Per-product candidate index with one fused vector per CQA pair.
//!
//! The weighted squared distance
//! `α‖v − e(Q)‖² + (1 − α)‖v − e(A)‖²` expands to
//! `‖v‖² + α‖e(Q)‖² + (1 − α)‖e(A)‖² − 2⟨v, αe(Q) + (1 − α)e(A)⟩`,
//! so each pair is stored as the vector `αe(Q) + (1 − α)e(A)` plus the two
//! weighted squared norms. Scores are distances: lower is better.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use crate::corpus::Product;
use crate::encoder::{encode, Embed, EncoderParams};
use crate::error::{Error, Result};
use crate::text::Vocabulary;

const MAGIC: &[u8; 4] = b"SQAI";
const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8 + 8 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct FusedCandidate {
    pub product_id: String,
    pub qa_id: String,
    pub fused: Vec<f32>,
    pub sq: f32,
    pub sa: f32,
}

impl FusedCandidate {
    pub fn from_vectors(product_id: &str, qa_id: &str, eq: &[f64], ea: &[f64], alpha: f64) -> Self {
        let sq_norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        Self {
            product_id: product_id.to_string(),
            qa_id: qa_id.to_string(),
            fused: eq.iter().zip(ea).map(|(q, a)| (alpha * q + (1.0 - alpha) * a) as f32).collect(),
            sq: (alpha * sq_norm(eq)) as f32,
            sa: ((1.0 - alpha) * sq_norm(ea)) as f32,
        }
    }

    /// Serialized size of this record in bytes.
    pub fn record_len(&self) -> usize {
        2 + self.product_id.len() + 2 + self.qa_id.len() + 4 * self.fused.len() + 8
    }
}

/// `‖v‖² + sq + sa − 2⟨v, fused⟩`, clamped at zero.
pub fn score(query_vec: &[f64], candidate: &FusedCandidate) -> Result<f64> {
    if query_vec.len() != candidate.fused.len() {
        return Err(Error::DimensionMismatch {
            expected: candidate.fused.len(),
            actual: query_vec.len(),
        });
    }
    Ok(score_unchecked(query_vec, squared_norm(query_vec), candidate))
}

fn squared_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn score_unchecked(query_vec: &[f64], query_sq_norm: f64, c: &FusedCandidate) -> f64 {
    let dot: f64 = query_vec.iter().zip(&c.fused).map(|(v, f)| v * f64::from(*f)).sum();
    (query_sq_norm + f64::from(c.sq) + f64::from(c.sa) - 2.0 * dot).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticIndex {
    pub dim: usize,
    pub alpha: f32,
    pub encoder_fingerprint: u64,
    pub vocab_fingerprint: u64,
    candidates: Vec<FusedCandidate>,
    by_product: HashMap<String, Range<usize>>,
}

impl SemanticIndex {
    fn from_sorted(dim: usize, alpha: f32, encoder_fingerprint: u64, vocab_fingerprint: u64, candidates: Vec<FusedCandidate>) -> Self {
        let mut by_product: HashMap<String, Range<usize>> = HashMap::new();
        let mut start = 0;
        for i in 1..=candidates.len() {
            if i == candidates.len() || candidates[i].product_id != candidates[start].product_id {
                by_product.insert(candidates[start].product_id.clone(), start..i);
                start = i;
            }
        }
        Self {
            dim,
            alpha,
            encoder_fingerprint,
            vocab_fingerprint,
            candidates,
            by_product,
        }
    }

    pub fn candidates(&self) -> &[FusedCandidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn num_products(&self) -> usize {
        self.by_product.len()
    }

    pub fn product(&self, product_id: &str) -> Option<&[FusedCandidate]> {
        self.by_product.get(product_id).map(|r| &self.candidates[r.clone()])
    }

    /// Ranks one product's candidates for an already-encoded query.
    pub fn rank(&self, product_id: &str, query_vec: &[f64], k: usize) -> Result<Vec<(String, f64)>> {
        if k == 0 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        if query_vec.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query_vec.len(),
            });
        }
        let cands = self.product(product_id).ok_or_else(|| Error::UnknownProduct(product_id.to_string()))?;
        let norm = squared_norm(query_vec);
        let mut scored: Vec<(&str, f64)> = cands.iter().map(|c| (c.qa_id.as_str(), score_unchecked(query_vec, norm, c))).collect();
        scored.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
        scored.truncate(k);
        Ok(scored.into_iter().map(|(id, s)| (id.to_string(), s)).collect())
    }

    /// Compares the stored fingerprints with the artifacts about to be used.
    /// A vocabulary mismatch is an error since token ids would be
    /// meaningless; an encoder mismatch only warns and returns `false`.
    pub fn verify(&self, params: &EncoderParams, vocab: &Vocabulary) -> Result<bool> {
        if self.vocab_fingerprint != vocab.fingerprint() {
            return Err(Error::Format(format!(
                "index was built with vocabulary {:016x}, got {:016x}",
                self.vocab_fingerprint,
                vocab.fingerprint()
            )));
        }
        if params.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: params.dim,
            });
        }
        let fp = params.fingerprint();
        if fp != self.encoder_fingerprint {
            tracing::warn!(
                index = format!("{:016x}", self.encoder_fingerprint),
                params = format!("{fp:016x}"),
                "encoder fingerprint differs from the one the index was built with"
            );
            return Ok(false);
        }
        Ok(true)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let body: usize = self.candidates.iter().map(FusedCandidate::record_len).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + body);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&self.alpha.to_le_bytes());
        out.extend_from_slice(&self.encoder_fingerprint.to_le_bytes());
        out.extend_from_slice(&self.vocab_fingerprint.to_le_bytes());
        out.extend_from_slice(&(self.candidates.len() as u64).to_le_bytes());
        for c in &self.candidates {
            for id in [&c.product_id, &c.qa_id] {
                let len = u16::try_from(id.len()).map_err(|_| Error::Format(format!("id longer than 65535 bytes: {id:.40}…")))?;
                out.extend_from_slice(&len.to_le_bytes());
                out.extend_from_slice(id.as_bytes());
            }
            for v in &c.fused {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&c.sq.to_le_bytes());
            out.extend_from_slice(&c.sa.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not an index file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let dim = r.u32()? as usize;
        let alpha = r.f32()?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Format(format!("alpha {alpha} outside [0, 1]")));
        }
        let encoder_fingerprint = r.u64()?;
        let vocab_fingerprint = r.u64()?;
        let count = r.u64()? as usize;
        let mut candidates = Vec::with_capacity(count.min(bytes.len() / (4 * dim.max(1) + 12)));
        for _ in 0..count {
            let product_id = r.string()?;
            let qa_id = r.string()?;
            let fused = (0..dim).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
            let sq = r.f32()?;
            let sa = r.f32()?;
            candidates.push(FusedCandidate {
                product_id,
                qa_id,
                fused,
                sq,
                sa,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let sorted = candidates
            .windows(2)
            .all(|w| (&w[0].product_id, &w[0].qa_id) < (&w[1].product_id, &w[1].qa_id));
        if !sorted {
            return Err(Error::Format("candidates not sorted by (product_id, qa_id)".into()));
        }
        Ok(Self::from_sorted(dim, alpha, encoder_fingerprint, vocab_fingerprint, candidates))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: end - self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize;
        let at = self.pos;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Format(format!("invalid UTF-8 id at offset {at}")))
    }
}

/// Encodes every pair of every product. Output order is (product_id, qa_id).
pub fn build_index(products: &[Product], params: &EncoderParams, vocab: &Vocabulary, alpha: f64) -> Result<SemanticIndex> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("alpha must be in [0, 1], got {alpha}")));
    }
    params.check_vocab(vocab)?;
    let mut candidates = Vec::new();
    for product in products {
        for pair in &product.pairs {
            let eq = encode(params, vocab, &pair.question);
            let ea = encode(params, vocab, &pair.answer);
            candidates.push(FusedCandidate::from_vectors(&product.product_id, &pair.qa_id, &eq, &ea, alpha));
        }
    }
    candidates.sort_by(|a, b| (&a.product_id, &a.qa_id).cmp(&(&b.product_id, &b.qa_id)));
    if let Some(w) = candidates.windows(2).find(|w| w[0].product_id == w[1].product_id && w[0].qa_id == w[1].qa_id) {
        return Err(Error::DuplicateId {
            kind: "qa",
            id: w[0].qa_id.clone(),
            line: 0,
        });
    }
    Ok(SemanticIndex::from_sorted(
        params.dim,
        alpha as f32,
        params.fingerprint(),
        vocab.fingerprint(),
        candidates,
    ))
}

/// Top-k pairs of one product for a query, ascending distance, ties by
/// `qa_id`. The encoder is invoked exactly once.
pub fn query_topk<E: Embed + ?Sized>(
    index: &SemanticIndex,
    encoder: &E,
    product_id: &str,
    query_text: &str,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    if index.product(product_id).is_none() {
        return Err(Error::UnknownProduct(product_id.to_string()));
    }
    let v = encoder.embed(query_text);
    index.rank(product_id, &v, k)
}

pub fn save_index(index: &SemanticIndex, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, index.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_index(path: impl AsRef<Path>) -> Result<SemanticIndex> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    SemanticIndex::from_bytes(&bytes)
}
