//! Candidate fetch against an exhaustive ranking, and TF-IDF cosine against
//! a from-scratch reimplementation.

use std::collections::HashMap;

use chatir_core::corpus::PairRecord;
use chatir_core::index::{build_index, QueryBag};
use chatir_core::text::Utterance;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sentence(rng: &mut ChaCha8Rng, vocab: usize) -> String {
    (0..rng.gen_range(1..8))
        .map(|_| {
            // skewed towards low ids so document frequencies vary
            let r: f64 = rng.gen_range(0.0..1.0);
            format!("w{}", ((r * r) * vocab as f64) as usize)
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn corpus(seed: u64, n: usize, vocab: usize) -> Vec<PairRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| PairRecord::new(i as u32, &sentence(&mut rng, vocab), &[], "reply"))
        .collect()
}

/// Plain TF-IDF cosine from document frequencies, no index structures.
fn reference_cosine(docs: &[Vec<String>], query: &[(String, f64)], id: usize) -> f64 {
    let n = docs.len() as f64;
    let mut df: HashMap<&str, usize> = HashMap::new();
    for d in docs {
        let mut seen: Vec<&str> = d.iter().map(String::as_str).collect();
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_default() += 1;
        }
    }
    let idf = |t: &str| ((n + 1.0) / (df[t] as f64 + 1.0)).ln() + 1.0;
    let mut tf: HashMap<&str, f64> = HashMap::new();
    for t in &docs[id] {
        *tf.entry(t).or_default() += 1.0;
    }
    let dnorm = tf.iter().map(|(t, c)| (c * idf(t)).powi(2)).sum::<f64>().sqrt();
    let known: Vec<(&str, f64)> = query
        .iter()
        .filter(|(t, _)| df.contains_key(t.as_str()))
        .map(|(t, w)| (t.as_str(), w * idf(t)))
        .collect();
    let qnorm = known.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    let dot: f64 = known.iter().map(|(t, w)| w * tf.get(t).copied().unwrap_or(0.0) * idf(t)).sum();
    if dot == 0.0 {
        0.0
    } else {
        dot / (qnorm * dnorm)
    }
}

#[test]
fn fetch_equals_exhaustive_ranking() {
    for c in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + c);
        let n = rng.gen_range(1..=1000);
        let vocab = rng.gen_range(5..400);
        let index = build_index(corpus(c, n, vocab)).unwrap();
        for _ in 0..100 {
            let message = Utterance::new(sentence(&mut rng, vocab + 20));
            let context: Vec<Utterance> = (0..rng.gen_range(0..=2)).map(|_| Utterance::new(sentence(&mut rng, vocab))).collect();
            let k = rng.gen_range(1..=60);
            let got = index.fetch_candidates(&message, &context, k).candidates;

            let bag = QueryBag::from_message(&message, &context);
            let mut all: Vec<(u32, f64)> = (0..n as u32)
                .map(|id| (id, index.tfidf_score(&bag, id).unwrap()))
                .filter(|&(_, s)| s > 0.0)
                .collect();
            all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            all.truncate(k);
            assert_eq!(got.len(), all.len());
            for (g, e) in got.iter().zip(&all) {
                assert_eq!(g.0, e.0, "corpus {c}");
                assert!((g.1 - e.1).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn scores_match_reference_cosine() {
    let records = corpus(77, 300, 60);
    let docs: Vec<Vec<String>> = records.iter().map(|r| r.message.tokens.clone()).collect();
    let index = build_index(records).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let message = Utterance::new(sentence(&mut rng, 80));
        let context = [Utterance::new(sentence(&mut rng, 60))];
        let bag = QueryBag::from_message(&message, &context);
        let query: Vec<(String, f64)> = bag.weights.iter().map(|(t, &w)| (t.clone(), w)).collect();
        for id in 0..docs.len() {
            let expected = reference_cosine(&docs, &query, id);
            let got = index.tfidf_score(&bag, id as u32).unwrap();
            assert!((got - expected).abs() <= 1e-9, "doc {id}: {got} vs {expected}");
        }
    }
}
