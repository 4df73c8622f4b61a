use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Adam, AttentionModel, ModelConfig, Vocab};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::slice::Slicing;
use crate::types::{Catalog, MsgId, Trace};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean masked-token cross-entropy per epoch.
    pub epoch_losses: Vec<f64>,
    pub windows: usize,
    pub steps: usize,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Slices every trace and cuts the slices into windows of at most
/// `config.window` events, `config.stride` apart. Slices shorter than two events
/// carry no ordering information and are dropped.
pub fn training_windows(traces: &[Trace], catalog: &Catalog, slicing: &Slicing, config: &ModelConfig) -> Vec<Vec<MsgId>> {
    let mut out = Vec::new();
    for slice in slicing.apply(traces, catalog) {
        let ev = &slice.events;
        if ev.len() < 2 {
            continue;
        }
        if ev.len() <= config.window {
            out.push(ev.clone());
            continue;
        }
        let last = ev.len() - config.window;
        let mut starts: Vec<usize> = (0..=last).step_by(config.stride).collect();
        if *starts.last().unwrap() != last {
            starts.push(last);
        }
        out.extend(starts.into_iter().map(|s| ev[s..s + config.window].to_vec()));
    }
    out
}

/// Encodes a window and replaces each position by MASK with probability `mask_prob`
/// (at least one position is always masked). Returns the input tokens and the
/// `(position, original token)` targets.
pub fn mask_window<R: Rng + ?Sized>(
    window: &[MsgId],
    vocab: &Vocab,
    mask_prob: f64,
    rng: &mut R,
) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut tokens = vocab.encode(window);
    let mut targets = Vec::new();
    for (i, t) in tokens.iter_mut().enumerate() {
        if rng.random_bool(mask_prob) {
            targets.push((i, *t));
            *t = vocab.mask();
        }
    }
    if targets.is_empty() && !tokens.is_empty() {
        let i = rng.random_range(0..tokens.len());
        targets.push((i, tokens[i]));
        tokens[i] = vocab.mask();
    }
    (tokens, targets)
}

/// Smallest epoch count (at least `config.epochs`) that gives `min_steps`
/// optimizer steps over `windows` training windows.
pub fn epochs_for_steps(config: &ModelConfig, windows: usize, min_steps: usize) -> usize {
    let per_epoch = windows.div_ceil(config.batch_size.max(1)).max(1);
    min_steps.div_ceil(per_epoch).max(config.epochs)
}

/// Learning-rate multiplier: linear warm-up over the first tenth of training (at
/// most 100 steps), then cosine decay towards zero.
pub fn lr_factor(step: usize, total: usize) -> f64 {
    let warmup = (total / 10).clamp(1, 100);
    if step < warmup {
        return (step + 1) as f64 / warmup as f64;
    }
    let t = (step - warmup) as f64 / (total - warmup).max(1) as f64;
    0.5 * (1.0 + (std::f64::consts::PI * t.min(1.0)).cos())
}

pub fn train<T: Scalar>(
    traces: &[Trace],
    catalog: &Catalog,
    slicing: &Slicing,
    config: &ModelConfig,
) -> Result<(AttentionModel<T>, TrainReport)> {
    train_with_log(traces, catalog, slicing, config, |_, _| {})
}

/// Trains a fresh model by masked-token prediction; `on_epoch` receives
/// `(epoch, mean loss)` after every epoch.
pub fn train_with_log<T: Scalar>(
    traces: &[Trace],
    catalog: &Catalog,
    slicing: &Slicing,
    config: &ModelConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(AttentionModel<T>, TrainReport)> {
    config.validate()?;
    let windows = training_windows(traces, catalog, slicing, config);
    if windows.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let vocab = Vocab::new(catalog);
    let mut model = AttentionModel::<T>::new(config.clone(), vocab);
    let mut opt = Adam::new(&model.params, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let total_steps = config.epochs * windows.len().div_ceil(config.batch_size);
    let mut report = TrainReport {
        epoch_losses: Vec::with_capacity(config.epochs),
        windows: windows.len(),
        steps: 0,
    };
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<_> = chunk
                .iter()
                .map(|&i| mask_window(&windows[i], &model.vocab, config.mask_prob, &mut rng))
                .collect();
            opt.lr = config.learning_rate * lr_factor(report.steps, total_steps);
            let (loss, grads) = model.loss_and_grad(&batch);
            let loss = loss.f64();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            let n: usize = batch.iter().map(|(_, t)| t.len()).sum();
            sum += loss * n as f64;
            count += n;
            opt.update(&mut model.params, &grads);
            report.steps += 1;
        }
        let mean = sum / count.max(1) as f64;
        log::info!("epoch {epoch}: loss {mean:.4}");
        on_epoch(epoch, mean);
        report.epoch_losses.push(mean);
    }
    Ok((model, report))
}
