//! Convolutional letter-trigram encoder and its softmax-over-negatives
//! training.
//!
//! One encoder serves both input modes: message mode encodes `M`, context
//! mode encodes `C₁ <sep> C₂ <sep> M` (oldest first). With no context the
//! two modes coincide.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::PairRecord;
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Gradients, Input, LayerSpec, LayerStack, Real, Tensor2, GRAD_CLIP_NORM};
use crate::text::{token_trigram_sequence, TrigramVector, Utterance, DEFAULT_TRIGRAM_DIM};

pub const CHECKPOINT_KIND: &str = "cdssm";

/// Joins context utterances in context mode. The tokenizer splits `<` and
/// `>` off as punctuation, so user text can never produce this token.
pub const SEPARATOR: &str = "<sep>";

pub const MIN_TRAIN_PAIRS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub trigram_dim: usize,
    pub projection: usize,
    pub window: usize,
    pub conv: usize,
    pub semantic: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        Self {
            trigram_dim: DEFAULT_TRIGRAM_DIM,
            projection: 96,
            window: 3,
            conv: 96,
            semantic: 128,
        }
    }
}

impl EncoderDims {
    pub fn specs(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::HashProjection {
                dim_in: self.trigram_dim,
                dim_out: self.projection,
            },
            LayerSpec::ConvOverTime {
                window: self.window,
                dim_in: self.projection,
                dim_out: self.conv,
            },
            LayerSpec::MaxPoolOverTime { dim: self.conv },
            LayerSpec::Dense {
                dim_in: self.conv,
                dim_out: self.semantic,
            },
            LayerSpec::L2Normalize { dim: self.semantic },
        ]
    }
}

/// Unit-norm utterance embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticVector {
    pub values: Vec<f32>,
}

impl SemanticVector {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    pub fn neg(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| -v).collect(),
        }
    }
}

/// Cosine of two unit vectors, clamped to `[-1, 1]`.
pub fn similarity(a: &SemanticVector, b: &SemanticVector) -> f64 {
    let dot: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    dot.clamp(-1.0, 1.0)
}

/// Token sequence for context mode.
pub fn context_tokens(context: &[Utterance], message: &Utterance) -> Vec<String> {
    let mut out = Vec::new();
    for utt in context {
        out.extend(utt.tokens.iter().cloned());
        out.push(SEPARATOR.to_string());
    }
    out.extend(message.tokens.iter().cloned());
    out
}

/// Trigram input for a token list; the empty list becomes a single zero
/// vector.
pub fn encoder_input<T: Real>(tokens: &[String], trigram_dim: usize) -> Input<T> {
    let mut seq = token_trigram_sequence(tokens, trigram_dim);
    if seq.is_empty() {
        seq.push(TrigramVector::empty(trigram_dim));
    }
    Input::Sparse(seq)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdssmEncoder {
    stack: LayerStack<f32>,
}

impl CdssmEncoder {
    pub fn new(seed: u64) -> Self {
        Self::with_dims(EncoderDims::default(), seed)
    }

    pub fn with_dims(dims: EncoderDims, seed: u64) -> Self {
        let stack = LayerStack::init(&dims.specs(), seed).expect("encoder specs are consistent");
        Self { stack }
    }

    pub fn from_stack(stack: LayerStack<f32>) -> Result<Self> {
        let specs = stack.specs();
        let ok = specs.len() == 5
            && matches!(specs[0], LayerSpec::HashProjection { .. })
            && matches!(specs[1], LayerSpec::ConvOverTime { .. })
            && matches!(specs[2], LayerSpec::MaxPoolOverTime { .. })
            && matches!(specs[3], LayerSpec::Dense { .. })
            && matches!(specs[4], LayerSpec::L2Normalize { .. });
        if !ok {
            return Err(Error::ShapeMismatch("not a convolutional encoder stack".into()));
        }
        Ok(Self { stack })
    }

    pub fn stack(&self) -> &LayerStack<f32> {
        &self.stack
    }

    pub fn trigram_dim(&self) -> usize {
        self.stack.input_dim()
    }

    pub fn dim(&self) -> usize {
        self.stack.output_dim()
    }

    pub fn encode(&self, tokens: &[String]) -> SemanticVector {
        let out = self
            .stack
            .predict(&encoder_input(tokens, self.trigram_dim()))
            .expect("encoder input matches its own projection");
        let v = SemanticVector {
            values: out.into_vec(),
        };
        // A zero pre-activation (empty input with zero biases) cannot be
        // normalized; it maps to a fixed unit vector instead.
        if (v.norm() - 1.0).abs() > 1e-3 {
            let c = (1.0 / v.values.len() as f64).sqrt() as f32;
            return SemanticVector {
                values: vec![c; v.values.len()],
            };
        }
        v
    }

    pub fn encode_utterance(&self, utt: &Utterance) -> SemanticVector {
        self.encode(&utt.tokens)
    }

    pub fn encode_context(&self, context: &[Utterance], message: &Utterance) -> SemanticVector {
        self.encode(&context_tokens(context, message))
    }

    pub fn training_loss(&self, batch: &TrainBatch, gamma: f64) -> Result<f64> {
        batch_loss(&self.stack, batch, gamma, None)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_stack(CHECKPOINT_KIND, &self.stack)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.manifest.kind != CHECKPOINT_KIND {
            return Err(Error::CorruptCheckpoint(format!(
                "expected a {CHECKPOINT_KIND} checkpoint, found {}",
                ckpt.manifest.kind
            )));
        }
        Self::from_stack(ckpt.to_stack()?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Parallel query / positive / negatives token lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainBatch {
    pub queries: Vec<Vec<String>>,
    pub positives: Vec<Vec<String>>,
    pub negatives: Vec<Vec<Vec<String>>>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn push(&mut self, query: Vec<String>, positive: Vec<String>, negatives: Vec<Vec<String>>) {
        self.queries.push(query);
        self.positives.push(positive);
        self.negatives.push(negatives);
    }

    fn validate(&self) -> Result<()> {
        if self.positives.len() != self.queries.len() || self.negatives.len() != self.queries.len() {
            return Err(Error::ShapeMismatch("batch lists differ in length".into()));
        }
        if self.negatives.iter().any(Vec::is_empty) {
            return Err(Error::ShapeMismatch("every example needs at least one negative".into()));
        }
        Ok(())
    }
}

/// `−log softmax(γ·cos)[0]` for one example, with gradients w.r.t. the
/// query and each candidate (positive first).
pub fn softmax_loss(q: &[f64], cands: &[&[f64]], gamma: f64) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
    let s: Vec<f64> = cands
        .iter()
        .map(|r| gamma * r.iter().zip(q).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = s.iter().map(|v| (v - max).exp()).sum();
    let loss = max + z.ln() - s[0];
    let coef: Vec<f64> = s
        .iter()
        .enumerate()
        .map(|(j, v)| (v - max).exp() / z - if j == 0 { 1.0 } else { 0.0 })
        .collect();
    let mut dq = vec![0.0; q.len()];
    let mut dr = Vec::with_capacity(cands.len());
    for (r, &c) in cands.iter().zip(&coef) {
        for (d, &rv) in dq.iter_mut().zip(r.iter()) {
            *d += gamma * c * rv;
        }
        dr.push(q.iter().map(|&qv| gamma * c * qv).collect());
    }
    (loss, dq, dr)
}

/// Summed batch loss; when `grads` is given, its gradient is accumulated.
pub fn batch_loss<T: Real>(
    stack: &LayerStack<T>,
    batch: &TrainBatch,
    gamma: f64,
    mut grads: Option<&mut Gradients<T>>,
) -> Result<f64> {
    batch.validate()?;
    let dim = stack.input_dim();
    let mut total = 0.0;
    for i in 0..batch.len() {
        let mut texts: Vec<&[String]> = vec![&batch.queries[i], &batch.positives[i]];
        texts.extend(batch.negatives[i].iter().map(Vec::as_slice));
        let passes = texts
            .iter()
            .map(|t| stack.forward(&encoder_input(t, dim)))
            .collect::<Result<Vec<_>>>()?;
        let vecs: Vec<Vec<f64>> = passes
            .iter()
            .map(|p| p.output().data().iter().map(|v| v.as_f64()).collect())
            .collect();
        let cands: Vec<&[f64]> = vecs[1..].iter().map(Vec::as_slice).collect();
        let (loss, dq, dr) = softmax_loss(&vecs[0], &cands, gamma);
        total += loss;
        if let Some(g) = grads.as_deref_mut() {
            let up = |d: &[f64]| Tensor2::row_vector(d.iter().map(|&v| T::of(v)).collect());
            stack.backward_into(&passes[0], &up(&dq), g)?;
            for (pass, d) in passes[1..].iter().zip(&dr) {
                stack.backward_into(pass, &up(d), g)?;
            }
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemanticConfig {
    pub epochs: usize,
    pub lr: f32,
    pub negatives: usize,
    pub gamma: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SemanticConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 0.5,
            negatives: 4,
            gamma: 10.0,
            batch_size: 8,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SemanticReport {
    pub epochs: Vec<EpochLoss>,
}

/// Draws `m` distinct indices from `0..n` excluding `skip`.
pub(crate) fn sample_others(rng: &mut ChaCha8Rng, n: usize, skip: usize, m: usize) -> Vec<usize> {
    let m = m.min(n.saturating_sub(1));
    let mut out = Vec::with_capacity(m);
    while out.len() < m {
        let mut j = rng.gen_range(0..n - 1);
        if j >= skip {
            j += 1;
        }
        if !out.contains(&j) {
            out.push(j);
        }
    }
    out
}

pub(crate) fn shuffle(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// Trains a fresh encoder initialized from `config.seed`.
pub fn train_semantic(corpus: &[PairRecord], config: &SemanticConfig) -> Result<(CdssmEncoder, SemanticReport)> {
    let mut encoder = CdssmEncoder::new(config.seed);
    let report = train_encoder(&mut encoder, corpus, config)?;
    Ok((encoder, report))
}

/// Continues training `encoder` in place. Each pair contributes a
/// message-mode example, plus a context-mode example when it has context.
pub fn train_encoder(
    encoder: &mut CdssmEncoder,
    corpus: &[PairRecord],
    config: &SemanticConfig,
) -> Result<SemanticReport> {
    if corpus.len() < MIN_TRAIN_PAIRS {
        return Err(Error::CorpusTooSmall {
            needed: MIN_TRAIN_PAIRS,
            got: corpus.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut report = SemanticReport::default();
    let mut grads = Gradients::zeros_for(&encoder.stack);
    for epoch in 0..config.epochs {
        let order = shuffle(&mut rng, corpus.len());
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let mut batch = TrainBatch::default();
            for &i in chunk {
                let rec = &corpus[i];
                let negs: Vec<Vec<String>> = sample_others(&mut rng, corpus.len(), i, config.negatives)
                    .into_iter()
                    .map(|j| corpus[j].response.tokens.clone())
                    .collect();
                batch.push(rec.message.tokens.clone(), rec.response.tokens.clone(), negs.clone());
                if !rec.context.is_empty() {
                    batch.push(context_tokens(&rec.context, &rec.message), rec.response.tokens.clone(), negs);
                }
            }
            grads.fill_zero();
            total += batch_loss(&encoder.stack, &batch, config.gamma, Some(&mut grads))?;
            count += batch.len();
            grads.scale(1.0 / batch.len() as f32);
            grads.clip_norm(GRAD_CLIP_NORM);
            encoder.stack.sgd_step(&grads, config.lr)?;
        }
        report.epochs.push(EpochLoss {
            epoch,
            mean_loss: total / count.max(1) as f64,
        });
    }
    Ok(report)
}

/// Mean cosine of each message to its own response and to a seeded random
/// other response.
pub fn separation(encoder: &CdssmEncoder, corpus: &[PairRecord], seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = corpus.len();
    let (mut paired, mut random) = (0.0, 0.0);
    for (i, rec) in corpus.iter().enumerate() {
        let q = encoder.encode_utterance(&rec.message);
        paired += similarity(&q, &encoder.encode_utterance(&rec.response));
        if n > 1 {
            let j = sample_others(&mut rng, n, i, 1)[0];
            random += similarity(&q, &encoder.encode_utterance(&corpus[j].response));
        }
    }
    let random = if n > 1 { random / n as f64 } else { 0.0 };
    (paired / n as f64, random)
}
