use std::collections::BTreeMap;

use super::{Scorer, Vocab};
use crate::error::{Error, Result};
use crate::slice::Slicing;
use crate::types::{Catalog, MsgId, Trace};

/// Left-context n-gram model with additive smoothing and backoff to shorter
/// histories when a history was never observed.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramScorer {
    pub vocab: Vocab,
    pub order: usize,
    pub k: f64,
    /// `tables[l]` maps a history of length `l` (token indices, PAD before the
    /// sequence start) to successor counts indexed by token.
    pub tables: Vec<BTreeMap<Vec<usize>, Vec<u64>>>,
}

impl NGramScorer {
    pub fn new(vocab: Vocab, order: usize, k: f64) -> Result<Self> {
        if order < 1 {
            return Err(Error::Config("n-gram order must be at least 1".into()));
        }
        if !(k >= 0.0 && k.is_finite()) {
            return Err(Error::Config("smoothing constant must be nonnegative".into()));
        }
        Ok(NGramScorer {
            vocab,
            order,
            k,
            tables: vec![BTreeMap::new(); order],
        })
    }

    /// Counts every sequence as-is.
    pub fn fit(vocab: Vocab, order: usize, k: f64, sequences: &[Trace]) -> Result<Self> {
        let mut m = Self::new(vocab, order, k)?;
        let width = m.vocab.len();
        for seq in sequences {
            let toks = m.vocab.encode(&seq.events);
            for (i, &t) in toks.iter().enumerate() {
                for l in 0..order {
                    let h = history(&toks, i, l);
                    m.tables[l].entry(h).or_insert_with(|| vec![0; width])[t] += 1;
                }
            }
        }
        if m.tables[0].is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(m)
    }

    /// Slices the traces first, like the attention trainer.
    pub fn fit_sliced(catalog: &Catalog, slicing: &Slicing, order: usize, k: f64, traces: &[Trace]) -> Result<Self> {
        Self::fit(Vocab::new(catalog), order, k, &slicing.apply(traces, catalog))
    }

    /// Smoothed conditional distribution given the tokens before position `i`.
    fn distribution(&self, toks: &[usize], i: usize) -> Vec<f64> {
        let n_ids = self.vocab.ids().len();
        let mut dist = vec![0.0; self.vocab.len()];
        let counts = (0..self.order)
            .rev()
            .find_map(|l| self.tables[l].get(&history(toks, i, l)));
        let total: u64 = counts.map_or(0, |c| c.iter().sum());
        let denom = total as f64 + self.k * n_ids as f64;
        for (tok, d) in dist.iter_mut().enumerate().skip(1).take(n_ids) {
            let c = counts.map_or(0, |c| c[tok]);
            *d = (c as f64 + self.k) / denom;
        }
        dist
    }
}

fn history(toks: &[usize], i: usize, len: usize) -> Vec<usize> {
    (0..len)
        .map(|j| {
            let back = len - j;
            if back <= i {
                toks[i - back]
            } else {
                0
            }
        })
        .collect()
}

impl Scorer for NGramScorer {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn context_len(&self) -> usize {
        self.order
    }

    fn score(&self, context: &[MsgId], position: usize) -> Vec<f64> {
        let toks = self.vocab.encode(&context[..position]);
        self.distribution(&toks, position)
    }
}
