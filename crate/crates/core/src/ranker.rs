//! Six-feature logistic ranker over fetched candidates.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::PairRecord;
use crate::error::{Error, Result};
use crate::hash::fnv1a64;
use crate::index::{InvertedIndex, QueryBag};
use crate::nn::{Checkpoint, Manifest};
use crate::semantic::{sample_others, similarity, CdssmEncoder, EpochLoss, SemanticVector};
use crate::text::{token_trigrams, Utterance};

pub const CHECKPOINT_KIND: &str = "ranker";
pub const FEATURES: usize = 6;
pub const MIN_TRAIN_PAIRS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Fetch score divided by the batch maximum.
    pub f1: f64,
    /// cos(M, R)
    pub f2: f64,
    /// cos(C⊕M, R)
    pub f3: f64,
    /// Token length ratio, shorter over longer.
    pub f4: f64,
    /// Jaccard overlap of letter-trigram sets of M and R.
    pub f5: f64,
    /// Always 1.
    pub f6: f64,
}

impl FeatureVector {
    pub fn from_array(a: [f64; FEATURES]) -> Self {
        Self {
            f1: a[0],
            f2: a[1],
            f3: a[2],
            f4: a[3],
            f5: a[4],
            f6: a[5],
        }
    }

    pub fn to_array(&self) -> [f64; FEATURES] {
        [self.f1, self.f2, self.f3, self.f4, self.f5, self.f6]
    }
}

/// Sorted, deduplicated hashes of every padded trigram in `tokens`.
pub fn trigram_set<S: AsRef<str>>(tokens: &[S]) -> Vec<u64> {
    let mut set: Vec<u64> = tokens
        .iter()
        .flat_map(|t| token_trigrams(t.as_ref()))
        .map(|g| fnv1a64(g.as_bytes()))
        .collect();
    set.sort_unstable();
    set.dedup();
    set
}

/// `|A∩B| / |A∪B|` over sorted sets; 0 when both are empty.
pub fn jaccard(a: &[u64], b: &[u64]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn length_ratio(m: usize, r: usize) -> f64 {
    m.min(r) as f64 / m.max(r).max(1) as f64
}

/// Query-side quantities shared by every candidate of one turn.
#[derive(Debug, Clone)]
pub struct QueryFeatures {
    message_vec: SemanticVector,
    context_vec: SemanticVector,
    trigrams: Vec<u64>,
    len: usize,
}

impl QueryFeatures {
    pub fn new(encoder: &CdssmEncoder, message: &Utterance, context: &[Utterance]) -> Self {
        let message_vec = encoder.encode_utterance(message);
        let context_vec = if context.is_empty() {
            message_vec.clone()
        } else {
            encoder.encode_context(context, message)
        };
        Self {
            message_vec,
            context_vec,
            trigrams: trigram_set(&message.tokens),
            len: message.tokens.len(),
        }
    }

    pub fn message_vec(&self) -> &SemanticVector {
        &self.message_vec
    }

    /// Features for one candidate response whose encoding is `response_vec`.
    pub fn features(&self, response: &Utterance, response_vec: &SemanticVector, f1: f64) -> FeatureVector {
        FeatureVector {
            f1: f1.clamp(0.0, 1.0),
            f2: similarity(&self.message_vec, response_vec),
            f3: similarity(&self.context_vec, response_vec),
            f4: length_ratio(self.len, response.tokens.len()),
            f5: jaccard(&self.trigrams, &trigram_set(&response.tokens)),
            f6: 1.0,
        }
    }
}

pub fn extract_features(
    message: &Utterance,
    context: &[Utterance],
    candidate: &PairRecord,
    fetch_score: f64,
    encoder: &CdssmEncoder,
) -> FeatureVector {
    QueryFeatures::new(encoder, message, context).features(
        &candidate.response,
        &encoder.encode_utterance(&candidate.response),
        fetch_score,
    )
}

/// Divides by the maximum; all zeros when the maximum is not positive.
pub fn normalize_by_max(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(0.0f64, f64::max);
    if max > 0.0 {
        scores.iter().map(|s| s / max).collect()
    } else {
        vec![0.0; scores.len()]
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankerModel {
    pub weights: [f32; FEATURES],
}

impl Default for RankerModel {
    fn default() -> Self {
        Self { weights: [0.0; FEATURES] }
    }
}

impl RankerModel {
    pub fn margin(&self, f: &FeatureVector) -> f64 {
        self.weights
            .iter()
            .zip(f.to_array())
            .map(|(&w, x)| f64::from(w) * x)
            .sum()
    }

    pub fn score(&self, f: &FeatureVector) -> f64 {
        sigmoid(self.margin(f))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            manifest: Manifest::new(CHECKPOINT_KIND, 0),
            payload: Vec::new(),
        }
        .with_tensor("weights", &self.weights)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.manifest.kind != CHECKPOINT_KIND {
            return Err(Error::CorruptCheckpoint(format!(
                "expected a {CHECKPOINT_KIND} checkpoint, found {}",
                ckpt.manifest.kind
            )));
        }
        let w = ckpt
            .tensor("weights")
            .filter(|w| w.len() == FEATURES)
            .ok_or_else(|| Error::CorruptCheckpoint("ranker weights missing or mis-sized".into()))?;
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::CorruptCheckpoint("non-finite ranker weight".into()));
        }
        let mut weights = [0.0; FEATURES];
        weights.copy_from_slice(w);
        Ok(Self { weights })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub id: u32,
    pub response: String,
    pub features: FeatureVector,
    pub score: f64,
}

/// Score descending, then ascending pair id.
pub fn order_by_score(list: &mut [RankedCandidate]) {
    list.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
}

pub fn rank_candidates(model: &RankerModel, candidates: Vec<(u32, String, FeatureVector)>) -> Result<Vec<RankedCandidate>> {
    if candidates.is_empty() {
        return Err(Error::NoCandidates);
    }
    let mut ranked: Vec<RankedCandidate> = candidates
        .into_iter()
        .map(|(id, response, features)| RankedCandidate {
            score: model.score(&features),
            id,
            response,
            features,
        })
        .collect();
    order_by_score(&mut ranked);
    Ok(ranked)
}

pub fn select_response(ranked: &[RankedCandidate]) -> Result<&RankedCandidate> {
    ranked.first().ok_or(Error::NoCandidates)
}

/// Mean of `−log σ(w·(f⁺ − f⁻))` and its gradient.
pub fn pairwise_loss(w: &[f64; FEATURES], pairs: &[(FeatureVector, FeatureVector)]) -> (f64, [f64; FEATURES]) {
    let mut loss = 0.0;
    let mut grad = [0.0; FEATURES];
    for (pos, neg) in pairs {
        let (p, n) = (pos.to_array(), neg.to_array());
        let diff: Vec<f64> = p.iter().zip(&n).map(|(a, b)| a - b).collect();
        let d: f64 = w.iter().zip(&diff).map(|(a, b)| a * b).sum();
        // softplus(−d), stable for large |d|
        loss += (-d).max(0.0) + (-d.abs()).exp().ln_1p();
        let s = sigmoid(-d);
        for (g, x) in grad.iter_mut().zip(&diff) {
            *g -= s * x;
        }
    }
    let n = pairs.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad)
}

pub fn pairwise_accuracy(model: &RankerModel, pairs: &[(FeatureVector, FeatureVector)]) -> f64 {
    let correct = pairs
        .iter()
        .filter(|(p, n)| model.margin(p) > model.margin(n))
        .count();
    correct as f64 / pairs.len().max(1) as f64
}

/// Full-batch gradient descent on the pairwise loss, starting from `init`.
/// The recorded loss of each epoch is the one before its update.
pub fn fit_pairwise(
    init: RankerModel,
    pairs: &[(FeatureVector, FeatureVector)],
    epochs: usize,
    lr: f64,
) -> Result<(RankerModel, Vec<EpochLoss>)> {
    let mut w: [f64; FEATURES] = init.weights.map(f64::from);
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let (loss, grad) = pairwise_loss(&w, pairs);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        history.push(EpochLoss { epoch, mean_loss: loss });
        for (wi, g) in w.iter_mut().zip(grad) {
            *wi -= lr * g;
        }
    }
    let model = if lr == 0.0 {
        init
    } else {
        RankerModel {
            weights: w.map(|v| v as f32),
        }
    };
    Ok((model, history))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankerConfig {
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for RankerConfig {
    fn default() -> Self {
        Self {
            negatives: 4,
            epochs: 3000,
            lr: 2.0,
            seed: 41,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankerReport {
    pub epochs: Vec<EpochLoss>,
    pub train_pairwise_accuracy: f64,
}

/// Training pairs: each record's own response against sampled other
/// responses. `f1` is the response-side TF-IDF cosine to the query under
/// the index's idf, normalized over the positive and its negatives.
pub fn training_pairs(
    corpus: &[PairRecord],
    encoder: &CdssmEncoder,
    index: &InvertedIndex,
    negatives: usize,
    seed: u64,
) -> Vec<(FeatureVector, FeatureVector)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let responses: Vec<SemanticVector> = corpus.iter().map(|r| encoder.encode_utterance(&r.response)).collect();
    let mut pairs = Vec::with_capacity(corpus.len() * negatives);
    for (i, rec) in corpus.iter().enumerate() {
        let q = QueryFeatures::new(encoder, &rec.message, &rec.context);
        let bag = QueryBag::from_message(&rec.message, &rec.context);
        let mut ids = vec![i];
        ids.extend(sample_others(&mut rng, corpus.len(), i, negatives));
        let raw: Vec<f64> = ids
            .iter()
            .map(|&j| index.score_tokens(&bag, &corpus[j].response.tokens))
            .collect();
        let f1 = normalize_by_max(&raw);
        let feats: Vec<FeatureVector> = ids
            .iter()
            .zip(&f1)
            .map(|(&j, &s)| q.features(&corpus[j].response, &responses[j], s))
            .collect();
        for neg in &feats[1..] {
            pairs.push((feats[0], *neg));
        }
    }
    pairs
}

pub fn train_ranker(
    corpus: &[PairRecord],
    encoder: &CdssmEncoder,
    index: &InvertedIndex,
    config: &RankerConfig,
) -> Result<(RankerModel, RankerReport)> {
    if corpus.len() < MIN_TRAIN_PAIRS {
        return Err(Error::CorpusTooSmall {
            needed: MIN_TRAIN_PAIRS,
            got: corpus.len(),
        });
    }
    let pairs = training_pairs(corpus, encoder, index, config.negatives, config.seed);
    let (model, epochs) = fit_pairwise(RankerModel::default(), &pairs, config.epochs, config.lr)?;
    Ok((
        model,
        RankerReport {
            train_pairwise_accuracy: pairwise_accuracy(&model, &pairs),
            epochs,
        },
    ))
}
