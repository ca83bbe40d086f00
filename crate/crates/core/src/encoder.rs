//! Siamese text encoder: token embeddings, an optional single softmax
//! attention layer with a residual connection, then mean pooling.
//!
//! One parameter set embeds both queries and candidates. Parameters are held
//! as `f64` for training and gradient checks and persisted as little-endian
//! `f32`; [`EncoderParams::init`] and training both leave parameters on the
//! `f32` grid so a save/load round trip is exact.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::text::{fnv1a64, Vocabulary};

pub const DEFAULT_DIM: usize = 64;
const MAGIC: &[u8; 4] = b"SQEP";
const VERSION: u32 = 1;
const FLAG_ATTENTION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8;

/// Square `dim × dim` projection matrices, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
}

impl Attention {
    fn zeros(dim: usize) -> Self {
        Self {
            wq: vec![0.0; dim * dim],
            wk: vec![0.0; dim * dim],
            wv: vec![0.0; dim * dim],
        }
    }

    pub fn matrices(&self) -> [&Vec<f64>; 3] {
        [&self.wq, &self.wk, &self.wv]
    }

    pub fn matrices_mut(&mut self) -> [&mut Vec<f64>; 3] {
        [&mut self.wq, &mut self.wk, &mut self.wv]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub dim: usize,
    /// `num_rows × dim`, row-major.
    pub embeddings: Vec<f64>,
    pub attention: Option<Attention>,
}

impl EncoderParams {
    /// Embedding rows uniform in (−0.1, 0.1); attention matrices identity
    /// plus uniform (−0.01, 0.01).
    pub fn init(vocab: &Vocabulary, dim: usize, use_attention: bool, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidConfig(format!("encoder dim must be >= 2, got {dim}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |scale: f32| f64::from(rng.gen_range(-scale..scale));
        let embeddings = (0..vocab.num_ids() * dim).map(|_| uniform(0.1)).collect();
        let attention = use_attention.then(|| {
            let mut att = Attention::zeros(dim);
            for m in att.matrices_mut() {
                for r in 0..dim {
                    for c in 0..dim {
                        let eye = if r == c { 1.0 } else { 0.0 };
                        m[r * dim + c] = f64::from((eye + uniform(0.01)) as f32);
                    }
                }
            }
            att
        });
        Ok(Self {
            dim,
            embeddings,
            attention,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.embeddings.len() / self.dim
    }

    pub fn row(&self, id: u32) -> &[f64] {
        let start = id as usize * self.dim;
        &self.embeddings[start..start + self.dim]
    }

    pub fn row_mut(&mut self, id: u32) -> &mut [f64] {
        let start = id as usize * self.dim;
        &mut self.embeddings[start..start + self.dim]
    }

    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if self.num_rows() != vocab.num_ids() {
            return Err(Error::DimensionMismatch {
                expected: vocab.num_ids(),
                actual: self.num_rows(),
            });
        }
        Ok(())
    }

    /// Rounds every parameter to the nearest `f32`.
    pub fn quantize_to_f32(&mut self) {
        let round = |v: &mut f64| *v = f64::from(*v as f32);
        self.embeddings.iter_mut().for_each(round);
        if let Some(att) = &mut self.attention {
            for m in att.matrices_mut() {
                m.iter_mut().for_each(round);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        let all = |v: &[f64]| v.iter().all(|x| x.is_finite());
        all(&self.embeddings) && self.attention.as_ref().is_none_or(|a| a.matrices().iter().all(|m| all(m)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let att_len = if self.attention.is_some() { 3 * self.dim * self.dim } else { 0 };
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * (self.embeddings.len() + att_len));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        let flags = if self.attention.is_some() { FLAG_ATTENTION } else { 0 };
        out.extend_from_slice(&flags.to_le_bytes());
        out.extend_from_slice(&(self.num_rows() as u64).to_le_bytes());
        let mut push = |vals: &[f64]| {
            for &v in vals {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        };
        push(&self.embeddings);
        if let Some(att) = &self.attention {
            for m in att.matrices() {
                push(m);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                offset: bytes.len(),
                needed: HEADER_LEN - bytes.len(),
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format("not an encoder params file (bad magic)".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let dim = u32_at(8) as usize;
        let flags = u32_at(12);
        let rows = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
        if dim < 2 {
            return Err(Error::Format(format!("invalid dim {dim}")));
        }
        let has_attention = flags & FLAG_ATTENTION != 0;
        let count = rows * dim + if has_attention { 3 * dim * dim } else { 0 };
        let body = &bytes[HEADER_LEN..];
        if body.len() < count * 4 {
            return Err(Error::Truncated {
                offset: bytes.len(),
                needed: count * 4 - body.len(),
            });
        }
        if body.len() > count * 4 {
            return Err(Error::Format(format!("{} trailing bytes", body.len() - count * 4)));
        }
        let mut vals = body
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))));
        let embeddings: Vec<f64> = vals.by_ref().take(rows * dim).collect();
        let attention = has_attention.then(|| {
            let mut take = || vals.by_ref().take(dim * dim).collect::<Vec<_>>();
            Attention {
                wq: take(),
                wk: take(),
                wv: take(),
            }
        });
        Ok(Self {
            dim,
            embeddings,
            attention,
        })
    }

    /// FNV-1a of the serialized parameters.
    pub fn fingerprint(&self) -> u64 {
        fnv1a64(&self.to_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Free-function form of [`EncoderParams::init`].
pub fn init_params(vocab: &Vocabulary, dim: usize, use_attention: bool, seed: u64) -> Result<EncoderParams> {
    EncoderParams::init(vocab, dim, use_attention, seed)
}

struct AttentionCache {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// row-stochastic `n × n`
    p: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
pub struct ForwardPass {
    ids: Vec<u32>,
    x: Vec<f64>,
    attention: Option<AttentionCache>,
    pub output: Vec<f64>,
}

fn matmul(x: &[f64], w: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        let oi = &mut out[i * d..(i + 1) * d];
        for (a, &xa) in xi.iter().enumerate() {
            let wa = &w[a * d..(a + 1) * d];
            for c in 0..d {
                oi[c] += xa * wa[c];
            }
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn forward(params: &EncoderParams, ids: &[u32]) -> ForwardPass {
    let d = params.dim;
    let n = ids.len();
    let mut x = Vec::with_capacity(n * d);
    for &id in ids {
        x.extend_from_slice(params.row(id));
    }
    if n == 0 {
        return ForwardPass {
            ids: Vec::new(),
            x,
            attention: None,
            output: vec![0.0; d],
        };
    }

    let (hidden, cache) = match &params.attention {
        None => (None, None),
        Some(att) => {
            let q = matmul(&x, &att.wq, n, d);
            let k = matmul(&x, &att.wk, n, d);
            let v = matmul(&x, &att.wv, n, d);
            let scale = 1.0 / (d as f64).sqrt();
            let mut p = vec![0.0; n * n];
            for i in 0..n {
                let qi = &q[i * d..(i + 1) * d];
                let row = &mut p[i * n..(i + 1) * n];
                for j in 0..n {
                    row[j] = dot(qi, &k[j * d..(j + 1) * d]) * scale;
                }
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                row.iter_mut().for_each(|s| *s /= sum);
            }
            let mut h = x.clone();
            for i in 0..n {
                for j in 0..n {
                    let pij = p[i * n + j];
                    for c in 0..d {
                        h[i * d + c] += pij * v[j * d + c];
                    }
                }
            }
            (Some(h), Some(AttentionCache { q, k, v, p }))
        }
    };

    let tokens = hidden.as_ref().unwrap_or(&x);
    let mut output = vec![0.0; d];
    for i in 0..n {
        for c in 0..d {
            output[c] += tokens[i * d + c];
        }
    }
    output.iter_mut().for_each(|o| *o /= n as f64);

    ForwardPass {
        ids: ids.to_vec(),
        x,
        attention: cache,
        output,
    }
}

/// Sparse gradient: embedding rows reached by the batch, plus dense
/// attention matrices when the encoder has them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients {
    pub rows: BTreeMap<u32, Vec<f64>>,
    pub attention: Option<Attention>,
}

impl Gradients {
    pub fn for_params(params: &EncoderParams) -> Self {
        Self {
            rows: BTreeMap::new(),
            attention: params.attention.as_ref().map(|_| Attention::zeros(params.dim)),
        }
    }

    pub fn is_zero(&self) -> bool {
        let zero = |v: &[f64]| v.iter().all(|x| *x == 0.0);
        self.rows.values().all(|r| zero(r)) && self.attention.as_ref().is_none_or(|a| a.matrices().iter().all(|m| zero(m)))
    }

    pub fn scale(&mut self, factor: f64) {
        for r in self.rows.values_mut() {
            r.iter_mut().for_each(|x| *x *= factor);
        }
        if let Some(a) = &mut self.attention {
            for m in a.matrices_mut() {
                m.iter_mut().for_each(|x| *x *= factor);
            }
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (id, r) in &other.rows {
            let dst = self.rows.entry(*id).or_insert_with(|| vec![0.0; r.len()]);
            dst.iter_mut().zip(r).for_each(|(a, b)| *a += b);
        }
        if let (Some(a), Some(b)) = (&mut self.attention, &other.attention) {
            for (ma, mb) in a.matrices_mut().into_iter().zip(b.matrices()) {
                ma.iter_mut().zip(mb.iter()).for_each(|(x, y)| *x += y);
            }
        }
    }

    /// Largest absolute difference against `other`, over the union of rows.
    pub fn max_abs_diff(&self, other: &Gradients) -> f64 {
        let mut worst: f64 = 0.0;
        let ids: std::collections::BTreeSet<u32> = self.rows.keys().chain(other.rows.keys()).copied().collect();
        for id in ids {
            let a = self.rows.get(&id);
            let b = other.rows.get(&id);
            let len = a.or(b).map_or(0, Vec::len);
            for c in 0..len {
                let x = a.map_or(0.0, |r| r[c]);
                let y = b.map_or(0.0, |r| r[c]);
                worst = worst.max((x - y).abs());
            }
        }
        if let (Some(a), Some(b)) = (&self.attention, &other.attention) {
            for (ma, mb) in a.matrices().into_iter().zip(b.matrices()) {
                for (x, y) in ma.iter().zip(mb.iter()) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
        worst
    }
}

/// Accumulates `scale · ∂(grad_out · output)/∂params` into `grads`.
pub fn backward(params: &EncoderParams, pass: &ForwardPass, grad_out: &[f64], scale: f64, grads: &mut Gradients) {
    let d = params.dim;
    let n = pass.ids.len();
    if n == 0 {
        return;
    }
    let dh: Vec<f64> = grad_out.iter().map(|g| g * scale / n as f64).collect();
    // every token receives dh through the mean; the residual passes it to x
    let mut dx: Vec<f64> = (0..n).flat_map(|_| dh.iter().copied()).collect();

    if let (Some(att), Some(cache)) = (&params.attention, &pass.attention) {
        let AttentionCache { q, k, v, p } = cache;
        let inv_sqrt = 1.0 / (d as f64).sqrt();
        let mut dv = vec![0.0; n * d];
        let mut ds = vec![0.0; n * n];
        for i in 0..n {
            let prow = &p[i * n..(i + 1) * n];
            let dp: Vec<f64> = (0..n).map(|j| dot(&dh, &v[j * d..(j + 1) * d])).collect();
            let expect: f64 = prow.iter().zip(&dp).map(|(a, b)| a * b).sum();
            for j in 0..n {
                ds[i * n + j] = prow[j] * (dp[j] - expect);
                for c in 0..d {
                    dv[j * d + c] += prow[j] * dh[c];
                }
            }
        }
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..n {
                let s = ds[i * n + j] * inv_sqrt;
                if s == 0.0 {
                    continue;
                }
                for c in 0..d {
                    dq[i * d + c] += s * k[j * d + c];
                    dk[j * d + c] += s * q[i * d + c];
                }
            }
        }
        let gatt = grads.attention.get_or_insert_with(|| Attention::zeros(d));
        let x = &pass.x;
        for (w, gw, dproj) in [(&att.wq, &mut gatt.wq, &dq), (&att.wk, &mut gatt.wk, &dk), (&att.wv, &mut gatt.wv, &dv)] {
            for i in 0..n {
                let xi = &x[i * d..(i + 1) * d];
                let di = &dproj[i * d..(i + 1) * d];
                for a in 0..d {
                    let wa = &w[a * d..(a + 1) * d];
                    let ga = &mut gw[a * d..(a + 1) * d];
                    for c in 0..d {
                        ga[c] += xi[a] * di[c];
                    }
                    dx[i * d + a] += dot(di, wa);
                }
            }
        }
    }

    for (i, &id) in pass.ids.iter().enumerate() {
        let row = grads.rows.entry(id).or_insert_with(|| vec![0.0; d]);
        row.iter_mut().zip(&dx[i * d..(i + 1) * d]).for_each(|(r, g)| *r += g);
    }
}

/// Embeds `text`; empty or fully dropped text maps to the zero vector.
pub fn encode(params: &EncoderParams, vocab: &Vocabulary, text: &str) -> Vec<f64> {
    forward(params, &vocab.token_ids(text)).output
}

pub fn encode_batch<S: AsRef<str>>(params: &EncoderParams, vocab: &Vocabulary, texts: &[S]) -> Vec<Vec<f64>> {
    texts.iter().map(|t| encode(params, vocab, t.as_ref())).collect()
}

/// Anything that maps text to a fixed-dimension vector.
pub trait Embed {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Parameters bundled with the vocabulary they were built against.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    params: EncoderParams,
    vocab: Vocabulary,
}

impl TextEncoder {
    pub fn new(params: EncoderParams, vocab: Vocabulary) -> Result<Self> {
        params.check_vocab(&vocab)?;
        Ok(Self { params, vocab })
    }

    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }
}

impl Embed for TextEncoder {
    fn dim(&self) -> usize {
        self.params.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        encode(&self.params, &self.vocab, text)
    }
}

/// Wraps an encoder and counts calls to [`Embed::embed`].
pub struct CountingEmbed<'a, E: ?Sized> {
    inner: &'a E,
    calls: AtomicUsize,
}

impl<'a, E: Embed + ?Sized> CountingEmbed<'a, E> {
    pub fn new(inner: &'a E) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<E: Embed + ?Sized> Embed for CountingEmbed<'_, E> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.embed(text)
    }
}
