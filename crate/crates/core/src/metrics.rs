//! Classification and ranking metrics.

use serde::{Deserialize, Serialize};

/// Unweighted mean of per-class F1. A class with no predictions and no
/// gold examples scores 0.
pub fn macro_f1(gold: &[usize], pred: &[usize], classes: usize) -> f64 {
    assert_eq!(gold.len(), pred.len());
    let mut f1_sum = 0.0;
    for c in 0..classes {
        let tp = gold.iter().zip(pred).filter(|&(&g, &p)| g == c && p == c).count() as f64;
        let fp = gold.iter().zip(pred).filter(|&(&g, &p)| g != c && p == c).count() as f64;
        let fn_ = gold.iter().zip(pred).filter(|&(&g, &p)| g == c && p != c).count() as f64;
        if tp > 0.0 {
            f1_sum += 2.0 * tp / (2.0 * tp + fp + fn_);
        }
    }
    f1_sum / classes as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl BinaryCounts {
    pub fn from_labels(gold: &[bool], pred: &[bool]) -> Self {
        let mut c = Self { tp: 0, fp: 0, tn: 0, fn_: 0 };
        for (&g, &p) in gold.iter().zip(pred) {
            match (g, p) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn false_positive_rate(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// 1-based rank of the true item given its score and the distractor
/// scores. Ties count against the true item.
pub fn pessimistic_rank(true_score: f64, distractors: &[f64]) -> usize {
    1 + distractors.iter().filter(|&&s| s >= true_score).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub queries: usize,
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub recall_at_10: f64,
    pub mrr: f64,
}

impl RetrievalMetrics {
    pub fn from_ranks(ranks: &[usize]) -> Self {
        let n = ranks.len().max(1) as f64;
        let at = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Self {
            queries: ranks.len(),
            recall_at_1: at(1),
            recall_at_5: at(5),
            recall_at_10: at(10),
            mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn macro_f1_hand_computed() {
        // class 0: tp 1 fp 1 fn 0 → 2/3; class 1: tp 1 fp 0 fn 1 → 2/3
        let f = macro_f1(&[0, 1, 1], &[0, 0, 1], 2);
        assert!((f - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(macro_f1(&[0, 1], &[0, 1], 2), 1.0);
    }

    #[test]
    fn ranks_and_recall() {
        assert_eq!(pessimistic_rank(0.5, &[0.1, 0.5, 0.9]), 3);
        let m = RetrievalMetrics::from_ranks(&[1, 2, 10]);
        assert!((m.recall_at_1 - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.recall_at_5 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.recall_at_10, 1.0);
        assert!((m.mrr - (1.0 + 0.5 + 0.1) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn binary_counts() {
        let c = BinaryCounts::from_labels(&[true, true, false, false], &[true, false, true, false]);
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (1, 1, 1, 1));
        assert_eq!(c.precision(), 0.5);
        assert_eq!(c.recall(), 0.5);
    }
}
