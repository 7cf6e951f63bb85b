//! Held-out evaluation drivers.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::PairRecord;
use crate::emotion::{classify_emotion, EmotionExample, EmotionModel, Lexicons};
use crate::error::Result;
use crate::index::{InvertedIndex, QueryBag};
use crate::metrics::{macro_f1, pessimistic_rank, BinaryCounts, RetrievalMetrics};
use crate::ranker::{normalize_by_max, QueryFeatures, RankerModel};
use crate::safety::{SafetyExample, SafetyGate};
use crate::semantic::{CdssmEncoder, SemanticVector};
use crate::text::Utterance;

pub const DEFAULT_DISTRACTORS: usize = 99;

/// Ranks each held-out pair's true response among `distractors` responses
/// sampled from the index. `f1` is the response-side TF-IDF cosine, since
/// distractors carry no message of their own.
pub fn evaluate_retrieval(
    index: &InvertedIndex,
    encoder: &CdssmEncoder,
    ranker: &RankerModel,
    heldout: &[PairRecord],
    distractors: usize,
    seed: u64,
) -> RetrievalMetrics {
    let pool = index.records();
    let pool_vecs: Vec<SemanticVector> = pool.iter().map(|r| encoder.encode_utterance(&r.response)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ranks = Vec::with_capacity(heldout.len());
    for rec in heldout {
        let eligible: Vec<usize> = (0..pool.len())
            .filter(|&j| pool[j].response.normalized != rec.response.normalized)
            .collect();
        let k = distractors.min(eligible.len());
        let chosen: Vec<usize> = sample(&mut rng, eligible.len(), k).into_iter().map(|i| eligible[i]).collect();

        let q = QueryFeatures::new(encoder, &rec.message, &rec.context);
        let bag = QueryBag::from_message(&rec.message, &rec.context);
        let mut raw = vec![index.score_tokens(&bag, &rec.response.tokens)];
        raw.extend(chosen.iter().map(|&j| index.score_tokens(&bag, &pool[j].response.tokens)));
        let f1 = normalize_by_max(&raw);

        let true_vec = encoder.encode_utterance(&rec.response);
        let true_score = ranker.score(&q.features(&rec.response, &true_vec, f1[0]));
        let others: Vec<f64> = chosen
            .iter()
            .zip(&f1[1..])
            .map(|(&j, &s)| ranker.score(&q.features(&pool[j].response, &pool_vecs[j], s)))
            .collect();
        ranks.push(pessimistic_rank(true_score, &others));
    }
    RetrievalMetrics::from_ranks(&ranks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionMetrics {
    pub examples: usize,
    pub macro_f1: f64,
    pub accuracy: f64,
}

pub fn evaluate_emotion_set(
    model: &EmotionModel,
    encoder: &CdssmEncoder,
    lex: &Lexicons,
    examples: &[EmotionExample],
) -> Result<EmotionMetrics> {
    let mut gold = Vec::with_capacity(examples.len());
    let mut pred = Vec::with_capacity(examples.len());
    for ex in examples {
        gold.push(ex.label.index());
        pred.push(classify_emotion(model, encoder, lex, &Utterance::new(ex.text.as_str()))?.label.index());
    }
    let correct = gold.iter().zip(&pred).filter(|(a, b)| a == b).count();
    Ok(EmotionMetrics {
        examples: examples.len(),
        macro_f1: macro_f1(&gold, &pred, 4),
        accuracy: correct as f64 / examples.len().max(1) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyMetrics {
    pub examples: usize,
    pub precision: f64,
    pub recall: f64,
    pub false_positive_rate: f64,
    pub counts: BinaryCounts,
}

pub fn evaluate_safety(gate: &SafetyGate, examples: &[SafetyExample]) -> SafetyMetrics {
    let gold: Vec<bool> = examples.iter().map(|e| e.label == 1).collect();
    let pred: Vec<bool> = examples.iter().map(|e| gate.assess(&e.text).offensive).collect();
    let counts = BinaryCounts::from_labels(&gold, &pred);
    SafetyMetrics {
        examples: examples.len(),
        precision: counts.precision(),
        recall: counts.recall(),
        false_positive_rate: counts.false_positive_rate(),
        counts,
    }
}
