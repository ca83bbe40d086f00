//! Triplet training for the encoder.
//!
//! Two ways of combining CQA triplets with distantly supervised ones:
//! [`Strategy::DataMix`] shuffles the union each epoch, while
//! [`Strategy::MultiTask`] alternates one batch from each source per step,
//! cycling the shorter source.

mod loss;
mod triplets;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderParams, Gradients};
use crate::error::{Error, Result};
use crate::text::Vocabulary;

pub use loss::{hinge_activation, loss_gradient, triplet_loss, BatchGradient, EncodedTriplet};
pub use triplets::{
    generate_distant_triplets, load_triplets, sample_cqa_triplets, save_triplets, Triplet, TripletSource,
};

use loss::{encoded_batch_gradient, encoded_loss};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    DataMix,
    MultiTask,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Linear ramp from 0 over `warmup_steps`, then linear decay to 0 at the
    /// last step.
    WarmupLinearDecay { warmup_steps: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub strategy: Strategy,
    pub hard_negative_fraction: f64,
    pub negatives_per_positive: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            learning_rate: 0.05,
            epochs: 10,
            batch_size: 16,
            strategy: Strategy::DataMix,
            hard_negative_fraction: 0.5,
            negatives_per_positive: 2,
            seed: 0,
            optimizer: Optimizer::Sgd,
            schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.margin > 0.0) {
            return bad(format!("margin must be > 0, got {}", self.margin));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if self.negatives_per_positive == 0 {
            return bad("negatives_per_positive must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.hard_negative_fraction) {
            return bad(format!("hard_negative_fraction must be in [0, 1], got {}", self.hard_negative_fraction));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return bad("adam needs beta1, beta2 in [0, 1) and eps > 0".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean triplet loss seen during each epoch, before each step's update.
    pub epoch_losses: Vec<f64>,
    /// Fraction of all training triplets with positive loss after training.
    pub final_violation_rate: f64,
    pub wall_time_secs: f64,
    pub steps: usize,
    pub num_cqa_triplets: usize,
    pub num_distant_triplets: usize,
}

struct AdamState {
    emb_m: Vec<f64>,
    emb_v: Vec<f64>,
    att_m: Vec<Vec<f64>>,
    att_v: Vec<Vec<f64>>,
    t: i32,
}

fn apply_sgd(params: &mut EncoderParams, grads: &Gradients, lr: f64) {
    for (&id, g) in &grads.rows {
        params.row_mut(id).iter_mut().zip(g).for_each(|(w, g)| *w -= lr * g);
    }
    if let (Some(att), Some(g)) = (&mut params.attention, &grads.attention) {
        for (w, gm) in att.matrices_mut().into_iter().zip(g.matrices()) {
            w.iter_mut().zip(gm.iter()).for_each(|(w, g)| *w -= lr * g);
        }
    }
}

fn adam_update(w: &mut [f64], g: Option<&[f64]>, m: &mut [f64], v: &mut [f64], lr_t: f64, beta1: f64, beta2: f64, eps: f64) {
    for i in 0..w.len() {
        let gi = g.map_or(0.0, |g| g[i]);
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
        w[i] -= lr_t * m[i] / (v[i].sqrt() + eps);
    }
}

/// Dense Adam: rows absent from the batch still move with their momentum.
fn apply_adam(params: &mut EncoderParams, grads: &Gradients, lr: f64, state: &mut AdamState, beta1: f64, beta2: f64, eps: f64) {
    state.t += 1;
    let lr_t = lr * (1.0 - beta2.powi(state.t)).sqrt() / (1.0 - beta1.powi(state.t));
    let dim = params.dim;
    for row in 0..params.num_rows() {
        let span = row * dim..(row + 1) * dim;
        let g = grads.rows.get(&(row as u32)).map(Vec::as_slice);
        adam_update(
            &mut params.embeddings[span.clone()],
            g,
            &mut state.emb_m[span.clone()],
            &mut state.emb_v[span],
            lr_t,
            beta1,
            beta2,
            eps,
        );
    }
    if let Some(att) = &mut params.attention {
        let gatt = grads.attention.as_ref();
        for (k, w) in att.matrices_mut().into_iter().enumerate() {
            let g = gatt.map(|g| g.matrices()[k].as_slice());
            adam_update(w, g, &mut state.att_m[k], &mut state.att_v[k], lr_t, beta1, beta2, eps);
        }
    }
}

fn step_lr(config: &TrainConfig, step: usize, total: usize) -> f64 {
    match config.schedule {
        LrSchedule::Constant => config.learning_rate,
        LrSchedule::WarmupLinearDecay { warmup_steps } => {
            if step < warmup_steps {
                config.learning_rate * (step + 1) as f64 / warmup_steps as f64
            } else {
                let rest = total.saturating_sub(warmup_steps).max(1);
                config.learning_rate * (total - step) as f64 / rest as f64
            }
        }
    }
}

/// Batches of indices into the combined triplet list for one epoch.
fn epoch_batches(config: &TrainConfig, n_cqa: usize, n_distant: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let chunk = |idx: Vec<usize>| -> Vec<Vec<usize>> { idx.chunks(config.batch_size).map(<[usize]>::to_vec).collect() };
    match config.strategy {
        Strategy::DataMix => {
            let mut all: Vec<usize> = (0..n_cqa + n_distant).collect();
            all.shuffle(rng);
            chunk(all)
        }
        Strategy::MultiTask => {
            let mut cqa: Vec<usize> = (0..n_cqa).collect();
            cqa.shuffle(rng);
            let mut distant: Vec<usize> = (n_cqa..n_cqa + n_distant).collect();
            distant.shuffle(rng);
            let (cqa, distant) = (chunk(cqa), chunk(distant));
            if cqa.is_empty() || distant.is_empty() {
                return if cqa.is_empty() { distant } else { cqa };
            }
            let rounds = cqa.len().max(distant.len());
            (0..rounds)
                .flat_map(|r| [cqa[r % cqa.len()].clone(), distant[r % distant.len()].clone()])
                .collect()
        }
    }
}

/// Trains a copy of `params` and returns it with a report.
///
/// Updates run in `f64`; the returned parameters are rounded to `f32` so they
/// equal what a save/load cycle produces. With zero epochs the input is
/// returned untouched.
pub fn train(
    params: &EncoderParams,
    vocab: &Vocabulary,
    cqa_triplets: &[Triplet],
    distant_triplets: &[Triplet],
    config: &TrainConfig,
) -> Result<(EncoderParams, TrainReport)> {
    config.validate()?;
    params.check_vocab(vocab)?;
    if cqa_triplets.is_empty() && distant_triplets.is_empty() {
        return Err(Error::InsufficientData("no training triplets".into()));
    }
    let started = Instant::now();
    let encoded: Vec<EncodedTriplet> = cqa_triplets
        .iter()
        .chain(distant_triplets)
        .map(|t| EncodedTriplet::new(vocab, t))
        .collect();
    let n_cqa = cqa_triplets.len();
    let n_distant = distant_triplets.len();

    let mut params = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState {
        emb_m: vec![0.0; params.embeddings.len()],
        emb_v: vec![0.0; params.embeddings.len()],
        att_m: vec![vec![0.0; params.dim * params.dim]; 3],
        att_v: vec![vec![0.0; params.dim * params.dim]; 3],
        t: 0,
    };
    if config.optimizer == Optimizer::Sgd {
        adam.emb_m = Vec::new();
        adam.emb_v = Vec::new();
    }

    let steps_per_epoch = {
        let b = |n: usize| n.div_ceil(config.batch_size);
        match config.strategy {
            Strategy::DataMix => b(n_cqa + n_distant),
            Strategy::MultiTask if n_cqa == 0 || n_distant == 0 => b(n_cqa + n_distant),
            Strategy::MultiTask => 2 * b(n_cqa).max(b(n_distant)),
        }
    };
    let total_steps = steps_per_epoch * config.epochs;
    let mut step = 0usize;
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let batches = epoch_batches(config, n_cqa, n_distant, &mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in &batches {
            let refs: Vec<&EncodedTriplet> = batch.iter().map(|&i| &encoded[i]).collect();
            let grad = encoded_batch_gradient(&params, &refs, config.margin);
            loss_sum += grad.loss * refs.len() as f64;
            seen += refs.len();
            let lr = step_lr(config, step, total_steps);
            match config.optimizer {
                Optimizer::Sgd => apply_sgd(&mut params, &grad.grads, lr),
                Optimizer::Adam { beta1, beta2, eps } => apply_adam(&mut params, &grad.grads, lr, &mut adam, beta1, beta2, eps),
            }
            step += 1;
        }
        if !params.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "training diverged in epoch {epoch}; lower the learning rate"
            )));
        }
        let mean = loss_sum / seen.max(1) as f64;
        tracing::debug!(epoch, loss = mean, "epoch finished");
        epoch_losses.push(mean);
    }

    if config.epochs > 0 {
        params.quantize_to_f32();
    }
    let violations = encoded.iter().filter(|t| encoded_loss(&params, t, config.margin) > 0.0).count();
    let report = TrainReport {
        epoch_losses,
        final_violation_rate: violations as f64 / encoded.len() as f64,
        wall_time_secs: started.elapsed().as_secs_f64(),
        steps: step,
        num_cqa_triplets: n_cqa,
        num_distant_triplets: n_distant,
    };
    Ok((params, report))
}
