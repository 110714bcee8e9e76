//! Encoders: pooled representations plus class logits.
//!
//! [`BowEncoder`] is a small trainable encoder (mean-pooled token embeddings,
//! a tanh layer whose output is the pooled representation, and a linear
//! classification head) with hand-written backpropagation. Parameters live in
//! one flat vector so the optimizer and gradient checks stay generic.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LabeledExample;
use crate::postag::EMPTY_SENTINEL;
use crate::tagset::{ClassifierOracle, OracleError};

pub const SEP_TOKEN: &str = "[SEP]";

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("checkpoint i/o on {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error("invalid encoder config: {0}")]
    Config(String),
}

/// Batch output of an encoder.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// `[batch, hidden]`
    pub pooled: Array2<f64>,
    /// `[batch, classes]`
    pub logits: Array2<f64>,
}

pub trait Encoder: Sync {
    fn hidden(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn encode(&self, examples: &[LabeledExample]) -> Encoded;

    fn predict(&self, examples: &[LabeledExample]) -> Vec<usize> {
        let enc = self.encode(examples);
        enc.logits.rows().into_iter().map(|r| argmax(r)).collect()
    }
}

pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// An encoder that can be trained by backpropagation over a flat parameter vector.
pub trait TrainableEncoder: Encoder {
    type Tape;

    fn forward(&self, examples: &[LabeledExample]) -> (Encoded, Self::Tape);

    /// Accumulates parameter gradients for upstream gradients of the outputs.
    fn backward(&self, tape: &Self::Tape, d_pooled: ArrayView2<f64>, d_logits: ArrayView2<f64>, grad: &mut [f64]);

    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
}

/// Wraps an encoder as a one-example-at-a-time classifier.
pub struct EncoderOracle<'a, E: Encoder + ?Sized>(pub &'a E);

impl<E: Encoder + ?Sized> ClassifierOracle for EncoderOracle<'_, E> {
    fn predict(&self, example: &LabeledExample) -> Result<usize, OracleError> {
        Ok(self.0.predict(std::slice::from_ref(example))[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    unk: usize,
}

impl Vocab {
    /// Specials first (`unk_token`, `[EMPTY]`, `[SEP]`), then corpus tokens
    /// in first-seen order.
    pub fn build<'a>(unk_token: &str, texts: impl IntoIterator<Item = &'a LabeledExample>) -> Self {
        let mut tokens = vec![unk_token.to_string(), EMPTY_SENTINEL.to_string(), SEP_TOKEN.to_string()];
        let mut index: HashMap<String, usize> = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        for ex in texts {
            for tok in ex.tokens() {
                if !index.contains_key(&tok) {
                    index.insert(tok.clone(), tokens.len());
                    tokens.push(tok);
                }
            }
        }
        Vocab { tokens, index, unk: 0 }
    }

    fn reindex(&mut self) {
        self.index = self.tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.unk)
    }

    pub fn unk_token(&self) -> &str {
        &self.tokens[self.unk]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BowConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub num_classes: usize,
    pub max_seq_len: usize,
}

impl Default for BowConfig {
    fn default() -> Self {
        BowConfig {
            embed_dim: 16,
            hidden: 8,
            num_classes: 2,
            max_seq_len: 256,
        }
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    vocab: usize,
    cfg: BowConfig,
}

impl Layout {
    fn emb(&self) -> std::ops::Range<usize> {
        0..self.vocab * self.cfg.embed_dim
    }
    fn w1(&self) -> std::ops::Range<usize> {
        let s = self.emb().end;
        s..s + self.cfg.embed_dim * self.cfg.hidden
    }
    fn b1(&self) -> std::ops::Range<usize> {
        let s = self.w1().end;
        s..s + self.cfg.hidden
    }
    fn w2(&self) -> std::ops::Range<usize> {
        let s = self.b1().end;
        s..s + self.cfg.hidden * self.cfg.num_classes
    }
    fn b2(&self) -> std::ops::Range<usize> {
        let s = self.w2().end;
        s..s + self.cfg.num_classes
    }
    fn total(&self) -> usize {
        self.b2().end
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BowEncoder {
    pub config: BowConfig,
    pub vocab: Vocab,
    params: Vec<f64>,
}

pub struct BowTape {
    ids: Vec<Vec<usize>>,
    mean: Array2<f64>,
    pooled: Array2<f64>,
}

impl BowEncoder {
    /// Embeddings ~ U(-0.1, 0.1); dense layers use Glorot-uniform; biases zero.
    pub fn new<R: Rng + ?Sized>(config: BowConfig, vocab: Vocab, rng: &mut R) -> Result<Self, EncoderError> {
        if config.embed_dim == 0 || config.hidden == 0 || config.num_classes < 2 || config.max_seq_len == 0 {
            return Err(EncoderError::Config(format!("{config:?}")));
        }
        let layout = Layout { vocab: vocab.len(), cfg: config };
        let mut params = vec![0.0; layout.total()];
        for v in &mut params[layout.emb()] {
            *v = rng.random_range(-0.1..0.1);
        }
        let glorot = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
        let a1 = glorot(config.embed_dim, config.hidden);
        for v in &mut params[layout.w1()] {
            *v = rng.random_range(-a1..a1);
        }
        let a2 = glorot(config.hidden, config.num_classes);
        for v in &mut params[layout.w2()] {
            *v = rng.random_range(-a2..a2);
        }
        Ok(BowEncoder { config, vocab, params })
    }

    fn layout(&self) -> Layout {
        Layout {
            vocab: self.vocab.len(),
            cfg: self.config,
        }
    }

    fn view(&self, r: std::ops::Range<usize>, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((rows, cols), &self.params[r]).expect("layout")
    }

    fn embeddings(&self) -> ArrayView2<'_, f64> {
        self.view(self.layout().emb(), self.vocab.len(), self.config.embed_dim)
    }

    pub fn token_ids(&self, example: &LabeledExample) -> Vec<usize> {
        let mut ids: Vec<usize> = crate::corpus::tokenize(&example.text_a)
            .iter()
            .map(|t| self.vocab.id(t))
            .collect();
        if let Some(b) = &example.text_b {
            ids.push(self.vocab.id(SEP_TOKEN));
            ids.extend(crate::corpus::tokenize(b).iter().map(|t| self.vocab.id(t)));
        }
        if ids.is_empty() {
            ids.push(self.vocab.id(EMPTY_SENTINEL));
        }
        ids.truncate(self.config.max_seq_len);
        ids
    }

    /// Static embedding of a single token (unknown tokens map to the unk row).
    pub fn token_embedding(&self, token: &str) -> Array1<f64> {
        self.embeddings().row(self.vocab.id(token)).to_owned()
    }

    pub fn save(&self, path: &Path) -> Result<(), EncoderError> {
        let err = |message: String| EncoderError::Checkpoint {
            path: path.display().to_string(),
            message,
        };
        let json = serde_json::to_string(self).map_err(|e| err(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, EncoderError> {
        let err = |message: String| EncoderError::Checkpoint {
            path: path.display().to_string(),
            message,
        };
        let raw = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut enc: BowEncoder = serde_json::from_str(&raw).map_err(|e| err(e.to_string()))?;
        enc.vocab.reindex();
        if enc.params.len() != enc.layout().total() {
            return Err(err("parameter count does not match config".into()));
        }
        Ok(enc)
    }
}

impl Encoder for BowEncoder {
    fn hidden(&self) -> usize {
        self.config.hidden
    }

    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn encode(&self, examples: &[LabeledExample]) -> Encoded {
        self.forward(examples).0
    }
}

impl TrainableEncoder for BowEncoder {
    type Tape = BowTape;

    fn forward(&self, examples: &[LabeledExample]) -> (Encoded, BowTape) {
        let l = self.layout();
        let (d, h, c) = (self.config.embed_dim, self.config.hidden, self.config.num_classes);
        let emb = self.embeddings();
        let ids: Vec<Vec<usize>> = examples.iter().map(|e| self.token_ids(e)).collect();
        let mut mean = Array2::zeros((examples.len(), d));
        for (i, row_ids) in ids.iter().enumerate() {
            let mut row = mean.row_mut(i);
            for &t in row_ids {
                row += &emb.row(t);
            }
            row /= row_ids.len() as f64;
        }
        let w1 = self.view(l.w1(), d, h);
        let b1 = ArrayView1::from(&self.params[l.b1()]);
        let w2 = self.view(l.w2(), h, c);
        let b2 = ArrayView1::from(&self.params[l.b2()]);
        let pooled = (mean.dot(&w1) + b1).mapv(f64::tanh);
        let logits = pooled.dot(&w2) + b2;
        (
            Encoded {
                pooled: pooled.clone(),
                logits,
            },
            BowTape { ids, mean, pooled },
        )
    }

    fn backward(&self, tape: &BowTape, d_pooled: ArrayView2<f64>, d_logits: ArrayView2<f64>, grad: &mut [f64]) {
        let l = self.layout();
        let (d, h, c) = (self.config.embed_dim, self.config.hidden, self.config.num_classes);
        let w1 = self.view(l.w1(), d, h);
        let w2 = self.view(l.w2(), h, c);

        let dz = &d_pooled + &d_logits.dot(&w2.t());
        {
            let mut gw2 = ArrayViewMut2::from_shape((h, c), &mut grad[l.w2()]).expect("layout");
            gw2 += &tape.pooled.t().dot(&d_logits);
        }
        {
            let mut gb2 = ArrayViewMut1::from(&mut grad[l.b2()]);
            gb2 += &d_logits.sum_axis(ndarray::Axis(0));
        }
        let dpre = dz * tape.pooled.mapv(|z| 1.0 - z * z);
        {
            let mut gw1 = ArrayViewMut2::from_shape((d, h), &mut grad[l.w1()]).expect("layout");
            gw1 += &tape.mean.t().dot(&dpre);
        }
        {
            let mut gb1 = ArrayViewMut1::from(&mut grad[l.b1()]);
            gb1 += &dpre.sum_axis(ndarray::Axis(0));
        }
        let dmean = dpre.dot(&w1.t());
        let mut gemb = ArrayViewMut2::from_shape((self.vocab.len(), d), &mut grad[l.emb()]).expect("layout");
        for (i, row_ids) in tape.ids.iter().enumerate() {
            let scale = 1.0 / row_ids.len() as f64;
            let dm = dmean.row(i);
            for &t in row_ids {
                gemb.slice_mut(s![t, ..]).scaled_add(scale, &dm);
            }
        }
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
}

/// Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, n: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        }
    }
}
