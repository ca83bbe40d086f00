//! Triplet hinge loss on Euclidean distances, with its analytic gradient.

use crate::encoder::{backward, forward, EncoderParams, Gradients};
use crate::text::Vocabulary;

use super::triplets::Triplet;

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `(a − b) / ‖a − b‖`, or zero when the two points coincide.
fn unit_direction(a: &[f64], b: &[f64], dist: f64) -> Vec<f64> {
    if dist == 0.0 {
        return vec![0.0; a.len()];
    }
    a.iter().zip(b).map(|(x, y)| (x - y) / dist).collect()
}

/// `d(a,p) − d(a,n) + margin`; the loss is this value clipped at zero.
pub fn hinge_activation(params: &EncoderParams, vocab: &Vocabulary, triplet: &Triplet, margin: f64) -> f64 {
    let a = forward(params, &vocab.token_ids(&triplet.anchor)).output;
    let p = forward(params, &vocab.token_ids(&triplet.positive)).output;
    let n = forward(params, &vocab.token_ids(&triplet.negative)).output;
    distance(&a, &p) - distance(&a, &n) + margin
}

pub fn triplet_loss(params: &EncoderParams, vocab: &Vocabulary, triplet: &Triplet, margin: f64) -> f64 {
    hinge_activation(params, vocab, triplet, margin).max(0.0)
}

/// Token ids of the three texts of a triplet, computed once.
#[derive(Debug, Clone)]
pub struct EncodedTriplet {
    pub anchor: Vec<u32>,
    pub positive: Vec<u32>,
    pub negative: Vec<u32>,
}

impl EncodedTriplet {
    pub fn new(vocab: &Vocabulary, t: &Triplet) -> Self {
        Self {
            anchor: vocab.token_ids(&t.anchor),
            positive: vocab.token_ids(&t.positive),
            negative: vocab.token_ids(&t.negative),
        }
    }
}

pub(crate) fn encoded_loss(params: &EncoderParams, t: &EncodedTriplet, margin: f64) -> f64 {
    let a = forward(params, &t.anchor).output;
    let p = forward(params, &t.positive).output;
    let n = forward(params, &t.negative).output;
    (distance(&a, &p) - distance(&a, &n) + margin).max(0.0)
}

/// Adds `scale · ∇loss(t)` to `grads` and returns the unscaled loss.
/// At the hinge kink (activation exactly 0) the branch counts as inactive.
pub(crate) fn accumulate(params: &EncoderParams, t: &EncodedTriplet, margin: f64, scale: f64, grads: &mut Gradients) -> f64 {
    let fa = forward(params, &t.anchor);
    let fp = forward(params, &t.positive);
    let fneg = forward(params, &t.negative);
    let d_ap = distance(&fa.output, &fp.output);
    let d_an = distance(&fa.output, &fneg.output);
    let activation = d_ap - d_an + margin;
    if activation <= 0.0 {
        return 0.0;
    }
    let u_ap = unit_direction(&fa.output, &fp.output, d_ap);
    let u_an = unit_direction(&fa.output, &fneg.output, d_an);
    let g_anchor: Vec<f64> = u_ap.iter().zip(&u_an).map(|(x, y)| x - y).collect();
    let g_pos: Vec<f64> = u_ap.iter().map(|x| -x).collect();
    backward(params, &fa, &g_anchor, scale, grads);
    backward(params, &fp, &g_pos, scale, grads);
    backward(params, &fneg, &u_an, scale, grads);
    activation
}

#[derive(Debug, Clone)]
pub struct BatchGradient {
    /// Mean loss over the batch.
    pub loss: f64,
    /// Number of triplets with a positive loss.
    pub active: usize,
    /// Gradient of the mean loss.
    pub grads: Gradients,
}

pub(crate) fn encoded_batch_gradient(params: &EncoderParams, batch: &[&EncodedTriplet], margin: f64) -> BatchGradient {
    let mut grads = Gradients::for_params(params);
    let scale = 1.0 / batch.len().max(1) as f64;
    let mut total = 0.0;
    let mut active = 0;
    for t in batch {
        let l = accumulate(params, t, margin, scale, &mut grads);
        if l > 0.0 {
            active += 1;
        }
        total += l;
    }
    BatchGradient {
        loss: total * scale,
        active,
        grads,
    }
}

/// Gradient of the mean triplet loss over `batch` with respect to every
/// embedding row the batch touches and, when present, the attention matrices.
pub fn loss_gradient(params: &EncoderParams, vocab: &Vocabulary, batch: &[Triplet], margin: f64) -> BatchGradient {
    let encoded: Vec<EncodedTriplet> = batch.iter().map(|t| EncodedTriplet::new(vocab, t)).collect();
    let refs: Vec<&EncodedTriplet> = encoded.iter().collect();
    encoded_batch_gradient(params, &refs, margin)
}
