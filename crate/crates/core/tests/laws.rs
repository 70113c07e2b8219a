//! Property tests for the distance distribution, the losses and kNN.

mod common;

use common::oracle::{knn_oracle, naive_entropy, naive_ratio_loss, naive_softmin, naive_sq_dist};
use nbe_core::evaluator::knn_classify;
use nbe_core::objective::{
    combined_loss, distance_ratio_loss, entropy_loss, softmin_distribution, ClassIndicator, DistanceDistribution,
    LossWeights,
};
use nbe_core::Matrix;
use proptest::prelude::*;

fn distances() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..50.0f64, 2..=12)
}

fn cloud(rows: std::ops::RangeInclusive<usize>, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0..3.0f64, dim), rows)
}

proptest! {
    #[test]
    fn probabilities_normalize_and_stay_positive(d in distances()) {
        let dist = DistanceDistribution::from_sq_distances(d.clone()).unwrap();
        let sum: f64 = dist.probs().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(dist.probs().iter().all(|&p| p > 0.0 && p <= 1.0));
        prop_assert!(dist.log_probs().iter().all(|l| l.is_finite() && *l <= 0.0));
        for (p, q) in dist.probs().iter().zip(naive_softmin(&d)) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn extreme_gaps_keep_log_probabilities_finite(d in prop::collection::vec(0.0..1e6f64, 2..=8)) {
        let dist = DistanceDistribution::from_sq_distances(d).unwrap();
        prop_assert!(dist.log_probs().iter().all(|l| l.is_finite()));
        prop_assert!((dist.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn common_offset_changes_nothing(d in distances(), offset in 0.0..1e3f64) {
        let base = DistanceDistribution::from_sq_distances(d.clone()).unwrap();
        let moved = DistanceDistribution::from_sq_distances(d.iter().map(|v| v + offset).collect()).unwrap();
        for (p, q) in base.probs().iter().zip(moved.probs()) {
            prop_assert!((p - q).abs() <= 1e-9);
        }
    }

    #[test]
    fn entropy_is_bounded_by_log_arity(d in distances()) {
        let dist = DistanceDistribution::from_sq_distances(d.clone()).unwrap();
        let h = entropy_loss(&dist).loss;
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (d.len() as f64).ln() + 1e-12);
        prop_assert!((h - naive_entropy(&d)).abs() <= 1e-9);
    }

    #[test]
    fn closer_exemplars_are_more_probable(d in distances()) {
        let dist = DistanceDistribution::from_sq_distances(d.clone()).unwrap();
        for i in 0..d.len() {
            for j in 0..d.len() {
                if d[i] < d[j] {
                    prop_assert!(dist.probs()[i] >= dist.probs()[j]);
                }
            }
        }
    }

    #[test]
    fn ratio_loss_is_negative_log_probability_of_the_class(d in distances(), pick in any::<prop::sample::Index>()) {
        let c = d.len();
        let class = pick.index(c);
        let dist = DistanceDistribution::from_sq_distances(d.clone()).unwrap();
        let target = ClassIndicator::one_hot(class, c).unwrap();
        let loss = distance_ratio_loss(&dist, &target).unwrap().loss;
        prop_assert!((loss + dist.log_probs()[class]).abs() <= 1e-12);
        prop_assert!((loss - naive_ratio_loss(&d, target.as_slice())).abs() <= 1e-9);
        prop_assert!(loss >= 0.0);
    }

    #[test]
    fn combined_loss_weighs_its_terms(
        z in cloud(2..=6, 3),
        xl in prop::collection::vec(-3.0..3.0f64, 3),
        xu in prop::collection::vec(-3.0..3.0f64, 3),
        wl in 0.0..=1.0f64,
        wu in 0.0..=1.0f64,
        pick in any::<prop::sample::Index>(),
    ) {
        let exemplars = Matrix::from_rows(&z).unwrap();
        let target = ClassIndicator::one_hot(pick.index(z.len()), z.len()).unwrap();
        let terms = combined_loss(&xl, &xu, &exemplars, &target, LossWeights::new(wl, wu).unwrap()).unwrap();

        let dl: Vec<f64> = z.iter().map(|r| naive_sq_dist(&xl, r)).collect();
        let du: Vec<f64> = z.iter().map(|r| naive_sq_dist(&xu, r)).collect();
        let expect_l = naive_ratio_loss(&dl, target.as_slice());
        let expect_u = naive_entropy(&du);
        prop_assert!((terms.labeled_loss - expect_l).abs() <= 1e-9);
        prop_assert!((terms.unlabeled_loss - expect_u).abs() <= 1e-9);
        prop_assert!((terms.combined - (wl * expect_l + wu * expect_u)).abs() <= 1e-9);

        let via_rows = softmin_distribution(&xu, &exemplars).unwrap();
        for (p, q) in via_rows.probs().iter().zip(naive_softmin(&du)) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn knn_agrees_with_exhaustive_search(
        refs in cloud(1..=30, 3),
        queries in cloud(1..=10, 3),
        labels_seed in prop::collection::vec(0usize..4, 30),
        k_pick in any::<prop::sample::Index>(),
    ) {
        let labels: Vec<usize> = labels_seed[..refs.len()].to_vec();
        let k = 1 + k_pick.index(refs.len());
        let pred = knn_classify(&Matrix::from_rows(&queries).unwrap(), &Matrix::from_rows(&refs).unwrap(), &labels, k).unwrap();
        for (q, p) in queries.iter().zip(&pred) {
            prop_assert_eq!(*p, knn_oracle(q, &refs, &labels, k));
        }
    }

    #[test]
    fn knn_ignores_query_order(
        refs in cloud(5..=20, 2),
        queries in cloud(2..=10, 2),
        labels_seed in prop::collection::vec(0usize..3, 20),
        shuffle in Just(()).prop_perturb(|_, mut rng| rng.random::<u64>()),
    ) {
        let labels: Vec<usize> = labels_seed[..refs.len()].to_vec();
        let refs_m = Matrix::from_rows(&refs).unwrap();
        let base = knn_classify(&Matrix::from_rows(&queries).unwrap(), &refs_m, &labels, 3).unwrap();
        let mut order: Vec<usize> = (0..queries.len()).collect();
        order.rotate_left((shuffle as usize) % queries.len());
        order.reverse();
        let permuted: Vec<Vec<f64>> = order.iter().map(|&i| queries[i].clone()).collect();
        let pred = knn_classify(&Matrix::from_rows(&permuted).unwrap(), &refs_m, &labels, 3).unwrap();
        for (slot, &i) in order.iter().enumerate() {
            prop_assert_eq!(pred[slot], base[i]);
        }
    }
}

#[test]
fn knn_tie_goes_to_the_nearest_class() {
    // Two votes each for classes 0 and 1; the single nearest point is class 1.
    let refs = Matrix::from_rows(&[[0.1], [0.2], [0.3], [0.4]]).unwrap();
    let labels = [1, 0, 0, 1];
    let q = Matrix::from_rows(&[[0.0]]).unwrap();
    assert_eq!(knn_classify(&q, &refs, &labels, 4).unwrap(), vec![1]);
    // Equal distances favor the lower reference index.
    let refs = Matrix::from_rows(&[[1.0], [-1.0]]).unwrap();
    assert_eq!(knn_classify(&q, &refs, &[3, 2], 1).unwrap(), vec![3]);
}
