use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::model::DitModel;
use crate::dataset::ChannelSample;
use crate::diffusion::{draw_training_noise, ema_update, mean_square_error, DiffusionSchedule};
use crate::math::sqrt;
use crate::par::map_indices;
use crate::rng::{stream_rng, EVAL_STREAM, TRAIN_STREAM};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Added to `sqrt(v_hat)` in the update denominator.
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-3,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be finite and >= 0"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(name, format!("{b} outside [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("eps", "must be positive"));
        }
        Ok(())
    }
}

/// First/second moment estimates and the number of updates taken.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// Bias-corrected Adam update.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::dims("Adam gradients", params.len(), grads.len()));
    }
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::dims("Adam moments", params.len(), state.m.len().min(state.v.len())));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        *p -= cfg.lr * (*m / bc1) / (sqrt(*v / bc2) + cfg.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub ema_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 8,
            adam: AdamConfig::default(),
            ema_decay: 0.999,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::config("ema_decay", format!("{} outside [0, 1]", self.ema_decay)));
        }
        self.adam.validate()
    }
}

/// Raw weights, EMA shadow and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: Vec<f64>,
    pub ema: Vec<f64>,
    pub adam: AdamState,
}

impl TrainState {
    pub fn new(model: &DitModel, seed: u64) -> Self {
        let params = model.init_params(seed);
        TrainState {
            ema: params.clone(),
            adam: AdamState::new(params.len()),
            params,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    /// Loss of the EMA weights on the held-out set with fixed noise draws.
    pub test_loss: f64,
}

/// Loss and accumulated parameter gradient for one batch. Per-sample work may
/// run in parallel; the reduction is in index order.
fn batch_gradient(
    model: &DitModel,
    params: &[f64],
    batch: &[(&ChannelSample, f64, Vec<f64>)],
) -> Result<(f64, Vec<f64>)> {
    let scale = 1.0 / batch.len() as f64;
    let per_sample = map_indices(batch.len(), |i| -> Result<(f64, Vec<f64>)> {
        let (sample, sigma, eps) = &batch[i];
        let noisy: Vec<f64> = sample.tensor.iter().zip(eps).map(|(h, e)| h + sigma * e).collect();
        let (d, cache) = model.forward(params, &noisy, *sigma, &sample.condition)?;
        let len = d.len() as f64;
        let d_out: Vec<f64> = d.iter().zip(&sample.tensor).map(|(a, b)| 2.0 * (a - b) * scale / len).collect();
        let mut g = vec![0.0; params.len()];
        model.backward(params, &cache, &d_out, &mut g)?;
        Ok((mean_square_error(&d, &sample.tensor), g))
    });
    let mut grads = vec![0.0; params.len()];
    let mut loss = 0.0;
    for (i, r) in per_sample.into_iter().enumerate() {
        let (l, g) = r.map_err(|e| e.at_sample(i))?;
        loss += l * scale;
        for (a, b) in grads.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((loss, grads))
}

/// Mean denoising loss over `samples` with noise drawn from a stream fixed by
/// `seed`, so repeated evaluations see identical noise.
pub fn evaluation_loss(
    model: &DitModel,
    params: &[f64],
    samples: &[ChannelSample],
    schedule: &DiffusionSchedule,
    seed: u64,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluation loss needs at least one sample"));
    }
    let mut rng = stream_rng(seed, EVAL_STREAM);
    let draws: Vec<_> = samples
        .iter()
        .map(|s| draw_training_noise(schedule, s.tensor.len(), &mut rng))
        .collect();
    let losses = map_indices(samples.len(), |i| -> Result<f64> {
        let (sigma, eps) = &draws[i];
        let s = &samples[i];
        let noisy: Vec<f64> = s.tensor.iter().zip(eps).map(|(h, e)| h + sigma * e).collect();
        let (d, _) = model.forward(params, &noisy, *sigma, &s.condition)?;
        Ok(mean_square_error(&d, &s.tensor))
    });
    let mut total = 0.0;
    for (i, l) in losses.into_iter().enumerate() {
        total += l.map_err(|e| e.at_sample(i))?;
    }
    Ok(total / samples.len() as f64)
}

/// Epoch loop: seeded shuffle, per-batch denoising loss, backprop, Adam and
/// EMA updates; after each epoch the EMA weights are scored on `test`.
pub fn train(
    model: &DitModel,
    state: &mut TrainState,
    train_set: &[ChannelSample],
    test_set: &[ChannelSample],
    schedule: &DiffusionSchedule,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    schedule.validate()?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::InsufficientData("training needs non-empty train and test sets".into()));
    }
    let len = model.config().tensor_len();
    if let Some(bad) = train_set.iter().chain(test_set).find(|s| s.tensor.len() != len) {
        return Err(Error::dims("training sample tensor", len, bad.tensor.len()));
    }
    let mut rng = stream_rng(cfg.seed, TRAIN_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let batches = order.chunks(cfg.batch_size);
        let n_batches = batches.len();
        for (bi, idx) in batches.enumerate() {
            let batch: Vec<_> = idx
                .iter()
                .map(|&i| {
                    let (sigma, eps) = draw_training_noise(schedule, len, &mut rng);
                    (&train_set[i], sigma, eps)
                })
                .collect();
            let (loss, grads) = batch_gradient(model, &state.params, &batch)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch} batch {bi}: {e}")))?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("training loss diverged at epoch {epoch} batch {bi}")));
            }
            adam_step(&mut state.params, &grads, &mut state.adam, &cfg.adam)?;
            ema_update(&mut state.ema, &state.params, cfg.ema_decay)?;
            epoch_loss += loss;
        }
        let test_loss = evaluation_loss(model, &state.ema, test_set, schedule, cfg.seed)?;
        let stats = EpochStats {
            epoch,
            train_loss: epoch_loss / n_batches as f64,
            test_loss,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(history)
}
