use chatir_core::ranker::{
    fit_pairwise, order_by_score, pairwise_accuracy, rank_candidates, select_response, FeatureVector, RankedCandidate,
    RankerModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Positives and negatives split by a hidden hyperplane with a margin.
fn separable(seed: u64, n: usize) -> Vec<(FeatureVector, FeatureVector)> {
    let hidden = [1.5, -0.5, 2.0, 0.0, 1.0, 0.0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dot = |a: &[f64; 6]| a.iter().zip(&hidden).map(|(x, w)| x * w).sum::<f64>();
    let mut pairs = Vec::new();
    while pairs.len() < n {
        let mut a = [0.0; 6];
        let mut b = [0.0; 6];
        for i in 0..5 {
            a[i] = rng.gen_range(0.0..1.0);
            b[i] = rng.gen_range(0.0..1.0);
        }
        a[5] = 1.0;
        b[5] = 1.0;
        let (da, db) = (dot(&a), dot(&b));
        if (da - db).abs() < 0.2 {
            continue;
        }
        let (p, q) = if da > db { (a, b) } else { (b, a) };
        pairs.push((FeatureVector::from_array(p), FeatureVector::from_array(q)));
    }
    pairs
}

#[test]
fn separable_task_is_learned_perfectly() {
    for seed in 0..5 {
        let pairs = separable(seed, 400);
        let (model, history) = fit_pairwise(RankerModel::default(), &pairs, 3000, 2.0).unwrap();
        assert_eq!(pairwise_accuracy(&model, &pairs), 1.0, "seed {seed}");
        assert!(history.last().unwrap().mean_loss < history[0].mean_loss);
        // zero weights: every pair costs ln 2
        assert!((history[0].mean_loss - std::f64::consts::LN_2).abs() < 1e-12);
    }
}

#[test]
fn loss_never_increases_at_a_small_step() {
    let pairs = separable(9, 200);
    let (_, history) = fit_pairwise(RankerModel::default(), &pairs, 200, 0.5).unwrap();
    for w in history.windows(2) {
        assert!(w[1].mean_loss <= w[0].mean_loss + 1e-12);
    }
}

#[test]
fn zero_learning_rate_is_identity() {
    let init = RankerModel {
        weights: [0.3, -0.1, 0.7, 0.2, -0.4, 0.05],
    };
    let (model, _) = fit_pairwise(init, &separable(1, 50), 10, 0.0).unwrap();
    assert_eq!(model, init);
}

fn candidates(seed: u64) -> Vec<RankedCandidate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..40)
        .map(|id| RankedCandidate {
            id,
            response: format!("r{id}"),
            features: FeatureVector::from_array([0.0; 6]),
            // coarse scores so ties are common
            score: f64::from(rng.gen_range(0..8u8)) / 8.0,
        })
        .collect()
}

#[test]
fn selection_is_invariant_under_increasing_transforms() {
    let transforms: [fn(f64) -> f64; 4] = [|x| 2.0 * x + 1.0, |x| x.powi(3), |x| x.exp(), |x| (x + 1.0).ln()];
    for seed in 0..20 {
        let mut base = candidates(seed);
        order_by_score(&mut base);
        let chosen = select_response(&base).unwrap().id;
        for t in transforms {
            let mut moved = candidates(seed);
            moved.iter_mut().for_each(|c| c.score = t(c.score));
            order_by_score(&mut moved);
            assert_eq!(select_response(&moved).unwrap().id, chosen);
            let a: Vec<u32> = base.iter().map(|c| c.id).collect();
            let b: Vec<u32> = moved.iter().map(|c| c.id).collect();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn ties_break_by_ascending_id_regardless_of_input_order() {
    let model = RankerModel::default();
    let f = FeatureVector::from_array([0.5; 6]);
    let forward: Vec<_> = (0..10u32).map(|i| (i, format!("r{i}"), f)).collect();
    let mut backward = forward.clone();
    backward.reverse();
    let a = rank_candidates(&model, forward).unwrap();
    let b = rank_candidates(&model, backward).unwrap();
    assert_eq!(a, b);
    assert_eq!(select_response(&a).unwrap().id, 0);
}
