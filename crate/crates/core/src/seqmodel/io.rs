//! Binary model files: `FMLM` magic, format version, scorer kind, payload of
//! little-endian fields, and a trailing CRC32 over everything before it.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use super::{AttentionModel, ModelConfig, NGramScorer, Params, Scorer, Vocab};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::MsgId;

pub const MAGIC: [u8; 4] = *b"FMLM";
pub const VERSION: u32 = 1;

const KIND_ATTENTION: u8 = 0;
const KIND_NGRAM: u8 = 1;

/// Any scorer that can be persisted.
#[derive(Debug, Clone)]
pub enum LoadedScorer {
    Attention(AttentionModel<f64>),
    NGram(NGramScorer),
}

impl LoadedScorer {
    pub fn kind(&self) -> &'static str {
        match self {
            LoadedScorer::Attention(_) => "attention",
            LoadedScorer::NGram(_) => "ngram",
        }
    }
}

impl From<AttentionModel<f64>> for LoadedScorer {
    fn from(m: AttentionModel<f64>) -> Self {
        LoadedScorer::Attention(m)
    }
}

impl From<NGramScorer> for LoadedScorer {
    fn from(m: NGramScorer) -> Self {
        LoadedScorer::NGram(m)
    }
}

impl Scorer for LoadedScorer {
    fn vocab(&self) -> &Vocab {
        match self {
            LoadedScorer::Attention(m) => m.vocab(),
            LoadedScorer::NGram(m) => m.vocab(),
        }
    }

    fn context_len(&self) -> usize {
        match self {
            LoadedScorer::Attention(m) => m.context_len(),
            LoadedScorer::NGram(m) => m.context_len(),
        }
    }

    fn score(&self, context: &[MsgId], position: usize) -> Vec<f64> {
        match self {
            LoadedScorer::Attention(m) => m.score(context, position),
            LoadedScorer::NGram(m) => m.score(context, position),
        }
    }
}

impl<T: Scalar> AttentionModel<T> {
    /// Same model with parameters converted to another scalar type.
    pub fn cast<U: Scalar>(&self) -> AttentionModel<U> {
        AttentionModel::from_params(
            self.config.clone(),
            self.vocab.clone(),
            Params {
                tensors: self.params.tensors.iter().map(|t| t.mapv(|v| U::of(v.f64()))).collect(),
            },
        )
    }
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn vocab(&mut self, v: &Vocab) {
        self.usize(v.ids().len());
        v.ids().iter().for_each(|&id| self.u32(id));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::CorruptFile("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        // Every length is bounded by the remaining bytes, which rejects absurd sizes early.
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| Error::CorruptFile(format!("implausible length {v}")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn vocab(&mut self) -> Result<Vocab> {
        let n = self.usize()?;
        let ids = (0..n).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        Vocab::from_ids(ids).map_err(|e| Error::CorruptFile(e.to_string()))
    }
}

fn write_attention(w: &mut Writer, m: &AttentionModel<f64>) {
    let c = &m.config;
    for v in [c.layers, c.heads, c.dim, c.window, c.epochs, c.batch_size, c.stride] {
        w.usize(v);
    }
    w.u64(c.seed);
    w.f64(c.mask_prob);
    w.f64(c.learning_rate);
    w.vocab(&m.vocab);
    w.usize(m.params.tensors.len());
    for t in &m.params.tensors {
        w.usize(t.nrows());
        w.usize(t.ncols());
        t.iter().for_each(|&v| w.f64(v));
    }
}

fn read_attention(r: &mut Reader) -> Result<AttentionModel<f64>> {
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = r.usize()?;
    }
    let [layers, heads, dim, window, epochs, batch_size, stride] = dims;
    let config = ModelConfig {
        layers,
        heads,
        dim,
        window,
        epochs,
        batch_size,
        stride,
        seed: r.u64()?,
        mask_prob: r.f64()?,
        learning_rate: r.f64()?,
    };
    config
        .validate()
        .map_err(|e| Error::CorruptFile(format!("stored config invalid: {e}")))?;
    let vocab = r.vocab()?;
    let expected = super::attention::shapes(&config, vocab.len());
    let n = r.usize()?;
    if n != expected.len() {
        return Err(Error::CorruptFile(format!("expected {} tensors, found {n}", expected.len())));
    }
    let mut tensors = Vec::with_capacity(n);
    for &(rows, cols) in &expected {
        let (fr, fc) = (r.usize()?, r.usize()?);
        if (fr, fc) != (rows, cols) {
            return Err(Error::CorruptFile(format!(
                "tensor shape {fr}x{fc}, expected {rows}x{cols}"
            )));
        }
        let data = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        tensors.push(Array2::from_shape_vec((rows, cols), data).expect("shape checked"));
    }
    Ok(AttentionModel::from_params(config, vocab, Params { tensors }))
}

fn write_ngram(w: &mut Writer, m: &NGramScorer) {
    w.usize(m.order);
    w.f64(m.k);
    w.vocab(&m.vocab);
    for table in &m.tables {
        w.usize(table.len());
        for (hist, counts) in table {
            hist.iter().for_each(|&t| w.u32(t as u32));
            let nz: Vec<_> = counts.iter().enumerate().filter(|(_, &c)| c > 0).collect();
            w.usize(nz.len());
            for (tok, &c) in nz {
                w.u32(tok as u32);
                w.u64(c);
            }
        }
    }
}

fn read_ngram(r: &mut Reader) -> Result<NGramScorer> {
    let order = r.usize()?;
    let k = r.f64()?;
    let vocab = r.vocab()?;
    let width = vocab.len();
    let mut m = NGramScorer::new(vocab, order, k).map_err(|e| Error::CorruptFile(e.to_string()))?;
    let bad_token = |t: u32| Error::CorruptFile(format!("token {t} outside the vocabulary"));
    for l in 0..order {
        let entries = r.usize()?;
        let mut table = BTreeMap::new();
        for _ in 0..entries {
            let hist = (0..l)
                .map(|_| r.u32().and_then(|t| if (t as usize) < width { Ok(t as usize) } else { Err(bad_token(t)) }))
                .collect::<Result<Vec<_>>>()?;
            let mut counts = vec![0u64; width];
            for _ in 0..r.usize()? {
                let tok = r.u32()?;
                *counts.get_mut(tok as usize).ok_or_else(|| bad_token(tok))? = r.u64()?;
            }
            table.insert(hist, counts);
        }
        m.tables[l] = table;
    }
    Ok(m)
}

pub fn save_bytes(scorer: &LoadedScorer) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(&MAGIC);
    w.u32(VERSION);
    match scorer {
        LoadedScorer::Attention(m) => {
            w.u8(KIND_ATTENTION);
            write_attention(&mut w, m);
        }
        LoadedScorer::NGram(m) => {
            w.u8(KIND_NGRAM);
            write_ngram(&mut w, m);
        }
    }
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    w.0
}

pub fn load_bytes(bytes: &[u8]) -> Result<LoadedScorer> {
    if bytes.len() >= MAGIC.len() && bytes[..4] != MAGIC {
        return Err(Error::VersionMismatch("not a flowmine model file (bad magic)".into()));
    }
    if bytes.len() < MAGIC.len() + 4 + 1 + 4 {
        return Err(Error::CorruptFile("file too short".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::VersionMismatch(format!(
            "model format version {version}, this build reads {VERSION}"
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::CorruptFile("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let scorer = match r.u8()? {
        KIND_ATTENTION => LoadedScorer::Attention(read_attention(&mut r)?),
        KIND_NGRAM => LoadedScorer::NGram(read_ngram(&mut r)?),
        k => return Err(Error::CorruptFile(format!("unknown scorer kind {k}"))),
    };
    if r.pos != body.len() {
        return Err(Error::CorruptFile("trailing bytes after payload".into()));
    }
    Ok(scorer)
}

pub fn save(path: impl AsRef<Path>, scorer: &LoadedScorer) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, save_bytes(scorer)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<LoadedScorer> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_bytes(&bytes)
}
