//! Pre-norm transformer encoder with bidirectional self-attention and a tied
//! output projection, with a hand-written backward pass.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, Scorer, Vocab};
use crate::scalar::Scalar;
use crate::types::MsgId;

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

const LN1_G: usize = 0;
const LN1_B: usize = 1;
const WQ: usize = 2;
const BQ: usize = 3;
const WK: usize = 4;
const BK: usize = 5;
const WV: usize = 6;
const BV: usize = 7;
const WO: usize = 8;
const BO: usize = 9;
const LN2_G: usize = 10;
const LN2_B: usize = 11;
const W1: usize = 12;
const B1: usize = 13;
const W2: usize = 14;
const B2: usize = 15;
const PER_BLOCK: usize = 16;

const TOK: usize = 0;
const POS: usize = 1;

/// All trainable tensors, stored as matrices (biases and gains are `1 x n`).
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub tensors: Vec<Array2<T>>,
}

/// Gradients share the parameter layout.
pub type Gradients<T> = Params<T>;

impl<T: Scalar> Params<T> {
    pub fn zeros_like(other: &Params<T>) -> Self {
        Params {
            tensors: other.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn scale(&mut self, by: T) {
        for t in &mut self.tensors {
            t.mapv_inplace(|v| v * by);
        }
    }

    pub fn add_assign(&mut self, other: &Params<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            *a += b;
        }
    }
}

fn block(layer: usize, k: usize) -> usize {
    2 + layer * PER_BLOCK + k
}

/// Shapes of every tensor, in storage order.
pub(crate) fn shapes(config: &ModelConfig, vocab: usize) -> Vec<(usize, usize)> {
    let d = config.dim;
    let f = 4 * d;
    let mut out = vec![(vocab, d), (config.window, d)];
    for _ in 0..config.layers {
        out.extend([
            (1, d),
            (1, d),
            (d, d),
            (1, d),
            (d, d),
            (1, d),
            (d, d),
            (1, d),
            (d, d),
            (1, d),
            (1, d),
            (1, d),
            (d, f),
            (1, f),
            (f, d),
            (1, d),
        ]);
    }
    out.extend([(1, d), (1, d), (1, vocab)]);
    out
}

pub(crate) fn tensor_names(layers: usize) -> Vec<String> {
    const BLOCK: [&str; PER_BLOCK] = [
        "ln1.gain", "ln1.bias", "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv",
        "attn.wo", "attn.bo", "ln2.gain", "ln2.bias", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2",
    ];
    let mut names = vec!["tok_emb".to_string(), "pos_emb".to_string()];
    for l in 0..layers {
        names.extend(BLOCK.iter().map(|n| format!("block{l}.{n}")));
    }
    names.extend(["ln_f.gain".into(), "ln_f.bias".into(), "out.bias".into()]);
    names
}

#[derive(Debug, Clone)]
pub struct AttentionModel<T> {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: Params<T>,
}

struct NormCache<T> {
    xhat: Array2<T>,
    rstd: Array1<T>,
}

struct BlockCache<T> {
    ln1: NormCache<T>,
    h: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Vec<Array2<T>>,
    o: Array2<T>,
    ln2: NormCache<T>,
    h2: Array2<T>,
    u: Array2<T>,
    act: Array2<T>,
}

struct Cache<T> {
    tokens: Vec<usize>,
    blocks: Vec<BlockCache<T>>,
    lnf: NormCache<T>,
    z: Array2<T>,
}

fn layer_norm<T: Scalar>(x: &Array2<T>, gain: &Array2<T>, bias: &Array2<T>) -> (Array2<T>, NormCache<T>) {
    let n = T::of(x.ncols() as f64);
    let eps = T::of(LN_EPS);
    let mean = x.sum_axis(Axis(1)) / n;
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / n;
    let rstd = var.mapv(|v| T::one() / (v + eps).sqrt());
    let xhat = &centered * &rstd.view().insert_axis(Axis(1));
    let y = &xhat * gain + bias;
    (y, NormCache { xhat, rstd })
}

fn layer_norm_backward<T: Scalar>(
    dy: &Array2<T>,
    cache: &NormCache<T>,
    gain: &Array2<T>,
) -> (Array2<T>, Array2<T>, Array2<T>) {
    let n = T::of(dy.ncols() as f64);
    let dgain = (dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    let dbias = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * gain;
    let mean_d = dxhat.sum_axis(Axis(1)) / n;
    let mean_dx = (&dxhat * &cache.xhat).sum_axis(Axis(1)) / n;
    let mut dx = dxhat;
    Zip::from(dx.rows_mut())
        .and(cache.xhat.rows())
        .and(&cache.rstd)
        .and(&mean_d)
        .and(&mean_dx)
        .for_each(|mut row, xh, &r, &md, &mdx| {
            Zip::from(&mut row).and(&xh).for_each(|d, &x| *d = r * (*d - md - x * mdx));
        });
    (dx, dgain, dbias)
}

fn gelu<T: Scalar>(u: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let a = T::of(0.044715);
    let half = T::of(0.5);
    half * u * (T::one() + (c * (u + a * u * u * u)).tanh())
}

fn gelu_grad<T: Scalar>(u: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let a = T::of(0.044715);
    let half = T::of(0.5);
    let t = (c * (u + a * u * u * u)).tanh();
    half * (T::one() + t) + half * u * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * u * u)
}

fn softmax_rows<T: Scalar>(x: &mut Array2<T>) {
    for mut row in x.rows_mut() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        if max == T::neg_infinity() {
            row.fill(T::zero());
            continue;
        }
        row.mapv_inplace(|v| (v - max).exp());
        let sum: T = row.iter().copied().sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn row_bias<T: Scalar>(b: &Array2<T>) -> ArrayView2<'_, T> {
    b.view()
}

impl<T: Scalar> AttentionModel<T> {
    /// Randomly initialized model (normal weights, unit gains, zero biases).
    pub fn new(config: ModelConfig, vocab: Vocab) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let names = tensor_names(config.layers);
        let tensors = shapes(&config, vocab.len())
            .into_iter()
            .zip(&names)
            .map(|((r, c), name)| {
                if name.ends_with(".gain") {
                    Array2::from_elem((r, c), T::one())
                } else if name.contains(".b") || name.ends_with("bias") {
                    Array2::zeros((r, c))
                } else {
                    Array2::from_shape_fn((r, c), |_| T::of(normal.sample(&mut rng)))
                }
            })
            .collect();
        AttentionModel {
            config,
            vocab,
            params: Params { tensors },
        }
    }

    pub fn from_params(config: ModelConfig, vocab: Vocab, params: Params<T>) -> Self {
        AttentionModel {
            config,
            vocab,
            params,
        }
    }

    pub fn tensor_names(&self) -> Vec<String> {
        tensor_names(self.config.layers)
    }

    fn p(&self, i: usize) -> &Array2<T> {
        &self.params.tensors[i]
    }

    fn forward(&self, tokens: &[usize]) -> (Array2<T>, Cache<T>) {
        let len = tokens.len();
        assert!(len <= self.config.window, "sequence longer than the model window");
        let d = self.config.dim;
        let heads = self.config.heads;
        let dh = d / heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let key_ok: Vec<bool> = tokens.iter().map(|&t| t != self.vocab.pad()).collect();

        let mut x = Array2::zeros((len, d));
        for (i, &t) in tokens.iter().enumerate() {
            let mut row = x.row_mut(i);
            row += &self.p(TOK).row(t);
            row += &self.p(POS).row(i);
        }
        let mut blocks = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let pb = |k| self.p(block(l, k));
            let (h, ln1) = layer_norm(&x, pb(LN1_G), pb(LN1_B));
            let q = h.dot(pb(WQ)) + row_bias(pb(BQ));
            let k = h.dot(pb(WK)) + row_bias(pb(BK));
            let v = h.dot(pb(WV)) + row_bias(pb(BV));
            let mut o = Array2::zeros((len, d));
            let mut probs = Vec::with_capacity(heads);
            for j in 0..heads {
                let cols = s![.., j * dh..(j + 1) * dh];
                let mut sc = q.slice(cols).dot(&k.slice(cols).t()) * scale;
                for (c, &ok) in key_ok.iter().enumerate() {
                    if !ok {
                        sc.column_mut(c).fill(T::neg_infinity());
                    }
                }
                softmax_rows(&mut sc);
                o.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
                probs.push(sc);
            }
            let attn_out = o.dot(pb(WO)) + row_bias(pb(BO));
            x += &attn_out;
            let (h2, ln2) = layer_norm(&x, pb(LN2_G), pb(LN2_B));
            let u = h2.dot(pb(W1)) + row_bias(pb(B1));
            let act = u.mapv(gelu);
            let ffn_out = act.dot(pb(W2)) + row_bias(pb(B2));
            x += &ffn_out;
            blocks.push(BlockCache {
                ln1,
                h,
                q,
                k,
                v,
                probs,
                o,
                ln2,
                h2,
                u,
                act,
            });
        }
        let nf = 2 + self.config.layers * PER_BLOCK;
        let (z, lnf) = layer_norm(&x, self.p(nf), self.p(nf + 1));
        let logits = z.dot(&self.p(TOK).t()) + row_bias(self.p(nf + 2));
        (
            logits,
            Cache {
                tokens: tokens.to_vec(),
                blocks,
                lnf,
                z,
            },
        )
    }

    /// Output distributions at every position.
    pub fn predict(&self, tokens: &[usize]) -> Array2<T> {
        let (mut logits, _) = self.forward(tokens);
        softmax_rows(&mut logits);
        logits
    }

    fn backward(&self, dlogits: &Array2<T>, cache: &Cache<T>, grads: &mut Gradients<T>) {
        let d = self.config.dim;
        let heads = self.config.heads;
        let dh = d / heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let nf = 2 + self.config.layers * PER_BLOCK;

        // Tied projection: logits = z E^T + b.
        grads.tensors[TOK] += &dlogits.t().dot(&cache.z);
        grads.tensors[nf + 2] += &dlogits.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dz = dlogits.dot(self.p(TOK));
        let (mut dx, dg, db) = layer_norm_backward(&dz, &cache.lnf, self.p(nf));
        grads.tensors[nf] += &dg;
        grads.tensors[nf + 1] += &db;

        for l in (0..self.config.layers).rev() {
            let bc = &cache.blocks[l];
            let idx = |k| block(l, k);
            // Feed-forward residual branch.
            grads.tensors[idx(W2)] += &bc.act.t().dot(&dx);
            grads.tensors[idx(B2)] += &dx.sum_axis(Axis(0)).insert_axis(Axis(0));
            let mut du = dx.dot(&self.p(idx(W2)).t());
            Zip::from(&mut du).and(&bc.u).for_each(|g, &u| *g *= gelu_grad(u));
            grads.tensors[idx(W1)] += &bc.h2.t().dot(&du);
            grads.tensors[idx(B1)] += &du.sum_axis(Axis(0)).insert_axis(Axis(0));
            let dh2 = du.dot(&self.p(idx(W1)).t());
            let (dx_ln2, dg2, db2) = layer_norm_backward(&dh2, &bc.ln2, self.p(idx(LN2_G)));
            grads.tensors[idx(LN2_G)] += &dg2;
            grads.tensors[idx(LN2_B)] += &db2;
            dx += &dx_ln2;

            // Attention residual branch.
            grads.tensors[idx(WO)] += &bc.o.t().dot(&dx);
            grads.tensors[idx(BO)] += &dx.sum_axis(Axis(0)).insert_axis(Axis(0));
            let d_o = dx.dot(&self.p(idx(WO)).t());
            let len = d_o.nrows();
            let mut dq = Array2::zeros((len, d));
            let mut dk = Array2::zeros((len, d));
            let mut dv = Array2::zeros((len, d));
            for j in 0..heads {
                let cols = s![.., j * dh..(j + 1) * dh];
                let a = &bc.probs[j];
                let doj = d_o.slice(cols);
                let da = doj.dot(&bc.v.slice(cols).t());
                dv.slice_mut(cols).assign(&a.t().dot(&doj));
                let row_dot = (&da * a).sum_axis(Axis(1)).insert_axis(Axis(1));
                let ds = (a * &(da - &row_dot)) * scale;
                dq.slice_mut(cols).assign(&ds.dot(&bc.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&bc.q.slice(cols)));
            }
            grads.tensors[idx(WQ)] += &bc.h.t().dot(&dq);
            grads.tensors[idx(BQ)] += &dq.sum_axis(Axis(0)).insert_axis(Axis(0));
            grads.tensors[idx(WK)] += &bc.h.t().dot(&dk);
            grads.tensors[idx(BK)] += &dk.sum_axis(Axis(0)).insert_axis(Axis(0));
            grads.tensors[idx(WV)] += &bc.h.t().dot(&dv);
            grads.tensors[idx(BV)] += &dv.sum_axis(Axis(0)).insert_axis(Axis(0));
            let dh = dq.dot(&self.p(idx(WQ)).t()) + dk.dot(&self.p(idx(WK)).t()) + dv.dot(&self.p(idx(WV)).t());
            let (dx_ln1, dg1, db1) = layer_norm_backward(&dh, &bc.ln1, self.p(idx(LN1_G)));
            grads.tensors[idx(LN1_G)] += &dg1;
            grads.tensors[idx(LN1_B)] += &db1;
            dx += &dx_ln1;
        }

        for (i, &t) in cache.tokens.iter().enumerate() {
            let row = dx.row(i);
            let mut e = grads.tensors[TOK].row_mut(t);
            e += &row;
            let mut p = grads.tensors[POS].row_mut(i);
            p += &row;
        }
    }

    /// Summed cross-entropy at `targets` (position, true token) for one sequence.
    pub fn loss(&self, tokens: &[usize], targets: &[(usize, usize)]) -> T {
        let (logits, _) = self.forward(tokens);
        targets
            .iter()
            .map(|&(pos, tgt)| -log_softmax_at(&logits, pos, tgt))
            .sum()
    }

    /// Mean masked-token cross-entropy over a batch and its gradient.
    pub fn loss_and_grad(&self, batch: &[(Vec<usize>, Vec<(usize, usize)>)]) -> (T, Gradients<T>) {
        let total: usize = batch.iter().map(|(_, t)| t.len()).sum();
        if total == 0 {
            return (T::zero(), Gradients::zeros_like(&self.params));
        }
        let norm = T::one() / T::of(total as f64);
        let per_seq = |(tokens, targets): &(Vec<usize>, Vec<(usize, usize)>)| {
            let mut grads = Gradients::zeros_like(&self.params);
            let mut loss = T::zero();
            if targets.is_empty() {
                return (loss, grads);
            }
            let (logits, cache) = self.forward(tokens);
            let mut dlogits = Array2::zeros(logits.raw_dim());
            for &(pos, tgt) in targets {
                let mut row = logits.row(pos).to_owned();
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                row.mapv_inplace(|v| (v - max).exp());
                let sum: T = row.iter().copied().sum();
                row.mapv_inplace(|v| v / sum);
                loss += -(row[tgt].ln());
                row[tgt] -= T::one();
                let mut drow = dlogits.row_mut(pos);
                drow.scaled_add(norm, &row);
            }
            self.backward(&dlogits, &cache, &mut grads);
            (loss, grads)
        };
        // Per-window work runs in parallel; the sum is taken in batch order so that
        // results do not depend on thread scheduling.
        let parts: Vec<(T, Gradients<T>)> = batch.par_iter().map(per_seq).collect();
        let mut parts = parts.into_iter();
        let (mut loss, mut grads) = parts.next().expect("batch is nonempty");
        for (l, g) in parts {
            loss += l;
            grads.add_assign(&g);
        }
        (loss * norm, grads)
    }
}

fn log_softmax_at<T: Scalar>(logits: &Array2<T>, pos: usize, tgt: usize) -> T {
    let row = logits.row(pos);
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    row[tgt] - lse
}

impl<T: Scalar> Scorer for AttentionModel<T> {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn context_len(&self) -> usize {
        self.config.window
    }

    fn score(&self, context: &[MsgId], position: usize) -> Vec<f64> {
        // Keep the window that ends as late as possible while still holding `position`.
        let w = self.config.window;
        let start = if context.len() <= w {
            0
        } else {
            (position + 1).saturating_sub(w).min(context.len() - w)
        };
        let end = (start + w).min(context.len());
        let mut tokens = self.vocab.encode(&context[start..end]);
        let pos = position - start;
        tokens[pos] = self.vocab.mask();
        let (logits, _) = self.forward(&tokens);
        let row = logits.row(pos);
        let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
        let mut dist: Vec<f64> = row.iter().map(|v| (v.f64() - max).exp()).collect();
        let sum: f64 = dist.iter().sum();
        dist.iter_mut().for_each(|p| *p /= sum);
        dist
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(n: u32) -> Vocab {
        Vocab::from_ids((1..=n).collect()).unwrap()
    }

    fn small(seed: u64) -> AttentionModel<f64> {
        let cfg = ModelConfig {
            layers: 1,
            heads: 2,
            dim: 8,
            window: 6,
            seed,
            ..ModelConfig::default()
        };
        AttentionModel::new(cfg, vocab(4))
    }

    #[test]
    fn zero_output_layer_is_uniform() {
        let mut m = small(1);
        m.params.tensors[TOK].fill(0.0);
        let n = m.params.tensors.len();
        m.params.tensors[n - 1].fill(0.0);
        let dist = m.score(&[1, 2, 3], 1);
        for p in dist {
            assert!((p - 1.0 / 6.0).abs() < 1e-6);
        }
    }

    #[test]
    fn distribution_sums_to_one() {
        let m = small(2);
        let dist = m.score(&[1, 2, 3, 4, 1], 2);
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(dist.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn padding_keys_do_not_leak() {
        let m = small(3);
        let a = m.predict(&[1, 5, 2, 0, 0]);
        let b = m.predict(&[1, 5, 2, 0]);
        for c in 0..a.ncols() {
            assert!((a[[1, c]] - b[[1, c]]).abs() < 1e-12);
        }
    }

    #[test]
    fn f32_model_runs() {
        let cfg = ModelConfig {
            layers: 1,
            heads: 2,
            dim: 8,
            window: 6,
            ..ModelConfig::default()
        };
        let m: AttentionModel<f32> = AttentionModel::new(cfg, vocab(3));
        let dist = m.score(&[1, 2, 3], 1);
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-5);
    }
}
