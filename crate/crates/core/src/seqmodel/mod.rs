//! Sequence scorers over message tokens: a bidirectional attention encoder trained
//! by masked-token prediction, and an n-gram baseline with the same interface.

mod attention;
mod io;
mod ngram;
mod optim;
mod train;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{Catalog, MsgId, Trace};

pub use attention::{AttentionModel, Gradients, Params};
pub use io::{load, load_bytes, save, save_bytes, LoadedScorer, MAGIC, VERSION};
pub use ngram::NGramScorer;
pub use optim::Adam;
pub use train::{epochs_for_steps, lr_factor, mask_window, train, train_with_log, training_windows, TrainReport};

/// Padding id inside scorer contexts.
pub const PAD_ID: MsgId = 0;
/// Mask sentinel inside scorer contexts.
pub const MASK_ID: MsgId = MsgId::MAX;

pub const DEFAULT_SAMPLES: usize = 64;

/// Bijection between catalog ids and token indices. Index 0 is PAD, the last index is MASK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    ids: Vec<MsgId>,
    index: HashMap<MsgId, usize>,
}

impl Vocab {
    pub fn new(catalog: &Catalog) -> Self {
        Self::from_ids(catalog.ids().collect()).expect("catalog ids are unique and nonzero")
    }

    pub fn from_ids(mut ids: Vec<MsgId>) -> Result<Self> {
        ids.sort_unstable();
        let n = ids.len();
        ids.dedup();
        if ids.len() != n || ids.first() == Some(&PAD_ID) || ids.last() == Some(&MASK_ID) {
            return Err(Error::Config("vocabulary ids must be unique, nonzero and not the mask sentinel".into()));
        }
        let index = ids.iter().enumerate().map(|(i, &id)| (id, i + 1)).collect();
        let v = Vocab { ids, index };
        debug_assert!(v.ids.iter().all(|&id| v.id(v.token(id).unwrap()) == Some(id)));
        Ok(v)
    }

    /// Number of tokens including PAD and MASK.
    pub fn len(&self) -> usize {
        self.ids.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pad(&self) -> usize {
        0
    }

    pub fn mask(&self) -> usize {
        self.ids.len() + 1
    }

    pub fn ids(&self) -> &[MsgId] {
        &self.ids
    }

    pub fn token(&self, id: MsgId) -> Option<usize> {
        match id {
            PAD_ID => Some(0),
            MASK_ID => Some(self.mask()),
            _ => self.index.get(&id).copied(),
        }
    }

    pub fn id(&self, token: usize) -> Option<MsgId> {
        match token {
            0 => Some(PAD_ID),
            t if t == self.mask() => Some(MASK_ID),
            t => self.ids.get(t - 1).copied(),
        }
    }

    /// Token indices for a context; ids outside the vocabulary become PAD.
    pub fn encode(&self, ids: &[MsgId]) -> Vec<usize> {
        ids.iter().map(|&id| self.token(id).unwrap_or(0)).collect()
    }

    /// Probability mass on `id` in a distribution over this vocabulary.
    pub fn prob(&self, dist: &[f64], id: MsgId) -> f64 {
        self.token(id).map_or(0.0, |t| dist[t])
    }
}

/// A model that predicts the token at one position of a context.
pub trait Scorer: Send + Sync {
    fn vocab(&self) -> &Vocab;

    /// Longest context the scorer looks at, including the predicted position.
    fn context_len(&self) -> usize;

    /// Probability distribution over the vocabulary at `position`. The token
    /// there is treated as masked regardless of its value.
    fn score(&self, context: &[MsgId], position: usize) -> Vec<f64>;
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn vocab(&self) -> &Vocab {
        (**self).vocab()
    }

    fn context_len(&self) -> usize {
        (**self).context_len()
    }

    fn score(&self, context: &[MsgId], position: usize) -> Vec<f64> {
        (**self).score(context, position)
    }
}

fn occurrences(traces: &[Trace], id: MsgId) -> Vec<(usize, usize)> {
    traces
        .iter()
        .enumerate()
        .flat_map(|(t, tr)| {
            tr.events
                .iter()
                .enumerate()
                .filter(move |(_, &e)| e == id)
                .map(move |(p, _)| (t, p))
        })
        .collect()
}

/// Mean predicted distribution of the message right after `m1`.
///
/// Up to `samples` occurrences of `m1` are drawn (seeded by `m1`). For each, the
/// slot after the occurrence is masked inside a window of `context_len` events
/// centered on it; an occurrence at the end of its sequence gets an appended slot.
pub fn successor_distribution<S: Scorer + ?Sized>(
    scorer: &S,
    traces: &[Trace],
    m1: MsgId,
    samples: usize,
) -> Result<Vec<f64>> {
    let mut occ = occurrences(traces, m1);
    if occ.is_empty() {
        return Err(Error::NoOccurrence(m1));
    }
    if occ.len() > samples.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(u64::from(m1));
        let mut picked = rand::seq::index::sample(&mut rng, occ.len(), samples.max(1)).into_vec();
        picked.sort_unstable();
        occ = picked.into_iter().map(|i| occ[i]).collect();
    }
    let width = scorer.context_len().max(2);
    let mut mean = vec![0.0; scorer.vocab().len()];
    let mut ctx = Vec::with_capacity(width);
    for &(t, p) in &occ {
        let events = &traces[t].events;
        let slot = p + 1;
        let from = slot.saturating_sub(width / 2);
        let to = (from + width).min(events.len().max(slot + 1));
        ctx.clear();
        ctx.extend_from_slice(&events[from..slot]);
        ctx.push(MASK_ID);
        ctx.extend_from_slice(&events[(slot + 1).min(events.len())..to.min(events.len())]);
        let dist = scorer.score(&ctx, slot - from);
        for (m, d) in mean.iter_mut().zip(dist) {
            *m += d;
        }
    }
    let n = occ.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Mean probability that `m2` is the next message after an occurrence of `m1`.
pub fn next_score<S: Scorer + ?Sized>(
    scorer: &S,
    traces: &[Trace],
    m1: MsgId,
    m2: MsgId,
    samples: usize,
) -> Result<f64> {
    let dist = successor_distribution(scorer, traces, m1, samples)?;
    Ok(scorer.vocab().prob(&dist, m2).clamp(0.0, 1.0))
}

/// Hyperparameters of the attention scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub window: usize,
    pub mask_prob: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub batch_size: usize,
    /// Offset between consecutive training windows cut from one slice.
    pub stride: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 2,
            heads: 4,
            dim: 64,
            window: 64,
            mask_prob: 0.15,
            epochs: 10,
            learning_rate: 1e-3,
            seed: 0,
            batch_size: 32,
            stride: 16,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.layers == 0 || self.heads == 0 || self.dim == 0 || self.window < 2 {
            return bad("layers, heads and dim must be positive and window at least 2");
        }
        if !self.dim.is_multiple_of(self.heads) {
            return bad("dim must be divisible by heads");
        }
        if !(self.mask_prob > 0.0 && self.mask_prob < 1.0) {
            return bad("mask_prob must lie in (0, 1)");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.stride == 0 {
            return bad("epochs, batch_size and stride must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}
