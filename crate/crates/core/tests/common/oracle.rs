//! Independent reference implementations used to check the library. Nothing
//! here calls into the code paths it is used to verify.

#![allow(dead_code)]

use std::collections::BTreeMap;

/// Central finite differences of `f` at `x`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute difference norm when both
/// vectors are below `1e-10`.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

pub fn naive_sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

/// Softmin probabilities straight from the definition, no shift.
pub fn naive_softmin(d: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = d.iter().map(|x| (-x).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

/// Cross-entropy of target against softmin(d), straight from the definition.
pub fn naive_ratio_loss(d: &[f64], target: &[f64]) -> f64 {
    let p = naive_softmin(d);
    -target.iter().zip(&p).map(|(t, q)| if *t == 0.0 { 0.0 } else { t * q.ln() }).sum::<f64>()
}

pub fn naive_entropy(d: &[f64]) -> f64 {
    naive_softmin(d).iter().map(|p| if *p == 0.0 { 0.0 } else { -p * p.ln() }).sum()
}

/// Exhaustive kNN: sort every reference by (distance, index), count votes,
/// break vote ties by the class met first in that order.
pub fn knn_oracle(query: &[f64], refs: &[Vec<f64>], labels: &[usize], k: usize) -> usize {
    let mut all: Vec<(f64, usize)> = refs.iter().enumerate().map(|(i, r)| (naive_sq_dist(query, r), i)).collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
    for &(_, i) in &all[..k] {
        *votes.entry(labels[i]).or_default() += 1;
    }
    let best = *votes.values().max().unwrap();
    for &(_, i) in &all[..k] {
        if votes[&labels[i]] == best {
            return labels[i];
        }
    }
    unreachable!()
}

/// Leave-one-out 1-NN accuracy over raw rows.
pub fn loo_one_nn_accuracy(rows: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut correct = 0;
    for i in 0..rows.len() {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in 0..rows.len() {
            if i != j {
                let d = naive_sq_dist(&rows[i], &rows[j]);
                if d < best.0 {
                    best = (d, j);
                }
            }
        }
        if labels[best.1] == labels[i] {
            correct += 1;
        }
    }
    correct as f64 / rows.len() as f64
}
