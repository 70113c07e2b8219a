#![allow(dead_code)]

pub mod oracle;

use nbe_core::data::{make_gaussian_clusters, split_semi_supervised, ClusterSpec, Dataset, SemiSupSplit, TestSelection};

/// Four well-separated clusters in 16 dimensions, seen through a random
/// linear map: 4 labeled, 100 unlabeled and 50 test samples per class.
pub fn projected_clusters(seed: u64) -> (Dataset, SemiSupSplit) {
    let spec = ClusterSpec { classes: 4, per_class: 154, dim: 16, spread: 1.0, separation: 8.0 };
    let ds = make_gaussian_clusters(spec, seed).unwrap().project_random_linear(16, seed).unwrap();
    let test = TestSelection::Fraction(50.0 / 154.0);
    let split = split_semi_supervised(&ds, 4, &test, seed).unwrap();
    (ds, split)
}
