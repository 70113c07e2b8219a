//! Neighbor-embedding objectives.
//!
//! A sample `x` is compared against one exemplar per class through the softmin
//! of squared embedded distances,
//!
//! ```text
//! P(x)_i = exp(-d_i) / Σ_j exp(-d_j),    d_i = ‖F(x) − F(z_i)‖²
//! ```
//!
//! Labeled samples pay the cross-entropy between their class indicator and
//! `P` (the distance-ratio loss); unlabeled samples pay the entropy of `P`.
//! Everything is in nats. Gradients are closed form: first with respect to
//! the distances, then chained through `∂d_i/∂F(x) = 2(F(x) − F(z_i))` and
//! `∂d_i/∂F(z_i) = −2(F(x) − F(z_i))`.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub fn squared_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::arg(format!("dimension mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(sq_dist(a, b))
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Softmin over squared distances, with the cached pieces the gradients reuse.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceDistribution {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
    sq_distances: Vec<f64>,
    shift: f64,
}

impl DistanceDistribution {
    /// Builds the distribution directly from squared distances.
    ///
    /// The smallest distance is subtracted before exponentiating, so the
    /// largest term is exactly `exp(0) = 1` and the normalizer lies in
    /// `[1, c]`. Log-probabilities come from the log-sum-exp form and stay
    /// finite even where `probs` underflows to zero (gaps beyond ~745 nats).
    pub fn from_sq_distances(sq_distances: Vec<f64>) -> Result<Self> {
        if sq_distances.len() < 2 {
            return Err(Error::arg(format!("need at least 2 exemplars, got {}", sq_distances.len())));
        }
        if let Some(d) = sq_distances.iter().find(|d| !d.is_finite()) {
            return Err(Error::numeric(format!("non-finite squared distance {d}")));
        }
        let shift = sq_distances.iter().copied().fold(f64::INFINITY, f64::min);
        let exps: Vec<f64> = sq_distances.iter().map(|d| (-(d - shift)).exp()).collect();
        let norm: f64 = exps.iter().sum();
        let log_norm = norm.ln();
        let probs = exps.iter().map(|e| e / norm).collect();
        let log_probs = sq_distances.iter().map(|d| -(d - shift) - log_norm).collect();
        Ok(DistanceDistribution { probs, log_probs, sq_distances, shift })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn sq_distances(&self) -> &[f64] {
        &self.sq_distances
    }

    /// The offset subtracted from every distance before exponentiation.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn arity(&self) -> usize {
        self.probs.len()
    }
}

/// Distance distribution of `x` against the rows of `exemplars` (one per class).
pub fn softmin_distribution(x: &[f64], exemplars: &Matrix) -> Result<DistanceDistribution> {
    if exemplars.rows() < 2 {
        return Err(Error::arg(format!("need at least 2 exemplars, got {}", exemplars.rows())));
    }
    if x.len() != exemplars.cols() {
        return Err(Error::arg(format!(
            "embedding has dimension {} but exemplars have {}",
            x.len(),
            exemplars.cols()
        )));
    }
    if !x.iter().all(|v| v.is_finite()) || !exemplars.is_finite() {
        return Err(Error::numeric("non-finite embedding"));
    }
    let d = (0..exemplars.rows()).map(|i| sq_dist(x, exemplars.row(i))).collect();
    DistanceDistribution::from_sq_distances(d)
}

/// Target distribution for the distance-ratio loss; one-hot by default, soft
/// targets allow encoding prior knowledge about class relations.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassIndicator {
    target: Vec<f64>,
}

impl ClassIndicator {
    pub fn one_hot(class: usize, classes: usize) -> Result<Self> {
        if class >= classes {
            return Err(Error::arg(format!("class {class} out of range for {classes} classes")));
        }
        let mut target = vec![0.0; classes];
        target[class] = 1.0;
        Ok(ClassIndicator { target })
    }

    pub fn soft(target: Vec<f64>) -> Result<Self> {
        if target.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::arg("target entries must be finite and non-negative"));
        }
        let sum: f64 = target.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::arg(format!("target must sum to 1, sums to {sum}")));
        }
        Ok(ClassIndicator { target })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.target
    }
}

/// A scalar loss with its gradient with respect to each squared distance.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceLoss {
    pub loss: f64,
    pub grad_sq_distances: Vec<f64>,
}

/// Cross-entropy `−Σ t_i log P_i` between target and distance distribution.
/// `∂L/∂d_i = t_i − P_i` (using `Σ t = 1`).
pub fn distance_ratio_loss(dist: &DistanceDistribution, target: &ClassIndicator) -> Result<DistanceLoss> {
    let t = target.as_slice();
    if t.len() != dist.arity() {
        return Err(Error::arg(format!(
            "target has {} classes but distribution has {}",
            t.len(),
            dist.arity()
        )));
    }
    let loss = -t.iter().zip(dist.log_probs()).map(|(ti, lp)| if *ti == 0.0 { 0.0 } else { ti * lp }).sum::<f64>();
    let grad_sq_distances = t.iter().zip(dist.probs()).map(|(ti, p)| ti - p).collect();
    Ok(DistanceLoss { loss, grad_sq_distances })
}

/// Entropy `−Σ P_i log P_i` of the distance distribution.
/// `∂H/∂d_i = P_i (log P_i + H)`.
pub fn entropy_loss(dist: &DistanceDistribution) -> DistanceLoss {
    let h = -dist.probs().iter().zip(dist.log_probs()).map(|(p, lp)| p * lp).sum::<f64>();
    // Rounding can leave the sum a hair outside [0, ln c].
    let h = h.clamp(0.0, (dist.arity() as f64).ln());
    let grad_sq_distances = dist.probs().iter().zip(dist.log_probs()).map(|(p, lp)| p * (lp + h)).collect();
    DistanceLoss { loss: h, grad_sq_distances }
}

/// Weights of the labeled and unlabeled terms, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    labeled: f64,
    unlabeled: f64,
}

impl LossWeights {
    pub fn new(labeled: f64, unlabeled: f64) -> Result<Self> {
        for (name, w) in [("lambda_l", labeled), ("lambda_u", unlabeled)] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::arg(format!("{name} must lie in [0, 1], got {w}")));
            }
        }
        Ok(LossWeights { labeled, unlabeled })
    }

    pub fn labeled(&self) -> f64 {
        self.labeled
    }

    pub fn unlabeled(&self) -> f64 {
        self.unlabeled
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { labeled: 1.0, unlabeled: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossTerms {
    pub labeled_loss: f64,
    pub unlabeled_loss: f64,
    pub combined: f64,
    pub grad_labeled: Vec<f64>,
    pub grad_unlabeled: Vec<f64>,
    /// One row per exemplar; accumulates both terms.
    pub grad_exemplars: Matrix,
}

/// Adds `scale · ∂(Σ g_i d_i)` into the sample and exemplar gradients.
fn chain_distance_grad(x: &[f64], exemplars: &Matrix, grad_d: &[f64], scale: f64, grad_x: &mut [f64], grad_z: &mut Matrix) {
    for (i, &g) in grad_d.iter().enumerate() {
        let coef = 2.0 * scale * g;
        if coef == 0.0 {
            continue;
        }
        let z = exemplars.row(i);
        let gz = grad_z.row_mut(i);
        for j in 0..x.len() {
            let diff = x[j] - z[j];
            grad_x[j] += coef * diff;
            gz[j] -= coef * diff;
        }
    }
}

/// `λ_L · L_L(x_l) + λ_U · L_U(x_u)` against a shared exemplar set.
pub fn combined_loss(
    labeled_emb: &[f64],
    unlabeled_emb: &[f64],
    exemplars: &Matrix,
    target: &ClassIndicator,
    weights: LossWeights,
) -> Result<LossTerms> {
    let dist_l = softmin_distribution(labeled_emb, exemplars)?;
    let dist_u = softmin_distribution(unlabeled_emb, exemplars)?;
    let ratio = distance_ratio_loss(&dist_l, target)?;
    let entropy = entropy_loss(&dist_u);

    let dim = exemplars.cols();
    let mut grad_labeled = vec![0.0; dim];
    let mut grad_unlabeled = vec![0.0; dim];
    let mut grad_exemplars = Matrix::zeros(exemplars.rows(), dim);
    chain_distance_grad(labeled_emb, exemplars, &ratio.grad_sq_distances, weights.labeled, &mut grad_labeled, &mut grad_exemplars);
    chain_distance_grad(
        unlabeled_emb,
        exemplars,
        &entropy.grad_sq_distances,
        weights.unlabeled,
        &mut grad_unlabeled,
        &mut grad_exemplars,
    );
    Ok(LossTerms {
        labeled_loss: ratio.loss,
        unlabeled_loss: entropy.loss,
        combined: weights.labeled * ratio.loss + weights.unlabeled * entropy.loss,
        grad_labeled,
        grad_unlabeled,
        grad_exemplars,
    })
}

/// Row layout of one episode's embedding batch: exemplars first (class
/// order), then the labeled batch, then the unlabeled batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeLayout {
    pub classes: usize,
    pub labeled: usize,
    pub unlabeled: usize,
}

impl EpisodeLayout {
    pub fn total(&self) -> usize {
        self.classes + self.labeled + self.unlabeled
    }
}

/// Batch objective of an episode, with the gradient for every embedding row.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLoss {
    /// Mean distance-ratio loss over the labeled batch.
    pub labeled_mean: f64,
    /// Mean entropy over the unlabeled batch.
    pub unlabeled_mean: f64,
    pub combined: f64,
    pub grad: Matrix,
}

/// Evaluates the weighted objective on an episode batch. Per-sample losses
/// are averaged within each batch.
pub fn episode_loss(
    embeddings: &Matrix,
    layout: EpisodeLayout,
    targets: &[ClassIndicator],
    weights: LossWeights,
) -> Result<EpisodeLoss> {
    if embeddings.rows() != layout.total() {
        return Err(Error::consistency(format!(
            "episode layout expects {} rows, embeddings have {}",
            layout.total(),
            embeddings.rows()
        )));
    }
    if targets.len() != layout.labeled {
        return Err(Error::consistency(format!(
            "{} targets for {} labeled samples",
            targets.len(),
            layout.labeled
        )));
    }
    let c = layout.classes;
    let exemplar_rows: Vec<usize> = (0..c).collect();
    let exemplars = embeddings.select_rows(&exemplar_rows);
    let mut grad = Matrix::zeros(embeddings.rows(), embeddings.cols());
    let mut grad_z = Matrix::zeros(c, embeddings.cols());

    let mut labeled_sum = 0.0;
    let scale_l = if layout.labeled > 0 { weights.labeled / layout.labeled as f64 } else { 0.0 };
    for (k, target) in targets.iter().enumerate() {
        let row = c + k;
        let x = embeddings.row(row);
        let dist = softmin_distribution(x, &exemplars)?;
        let term = distance_ratio_loss(&dist, target)?;
        labeled_sum += term.loss;
        let mut gx = vec![0.0; x.len()];
        chain_distance_grad(x, &exemplars, &term.grad_sq_distances, scale_l, &mut gx, &mut grad_z);
        grad.row_mut(row).copy_from_slice(&gx);
    }

    let mut unlabeled_sum = 0.0;
    let scale_u = if layout.unlabeled > 0 { weights.unlabeled / layout.unlabeled as f64 } else { 0.0 };
    for k in 0..layout.unlabeled {
        let row = c + layout.labeled + k;
        let x = embeddings.row(row);
        let dist = softmin_distribution(x, &exemplars)?;
        let term = entropy_loss(&dist);
        unlabeled_sum += term.loss;
        let mut gx = vec![0.0; x.len()];
        chain_distance_grad(x, &exemplars, &term.grad_sq_distances, scale_u, &mut gx, &mut grad_z);
        grad.row_mut(row).copy_from_slice(&gx);
    }
    for i in 0..c {
        grad.row_mut(i).copy_from_slice(grad_z.row(i));
    }

    let labeled_mean = if layout.labeled > 0 { labeled_sum / layout.labeled as f64 } else { 0.0 };
    let unlabeled_mean = if layout.unlabeled > 0 { unlabeled_sum / layout.unlabeled as f64 } else { 0.0 };
    Ok(EpisodeLoss {
        labeled_mean,
        unlabeled_mean,
        combined: weights.labeled * labeled_mean + weights.unlabeled * unlabeled_mean,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN_10: f64 = std::f64::consts::LN_10;

    fn dist(d: &[f64]) -> DistanceDistribution {
        DistanceDistribution::from_sq_distances(d.to_vec()).unwrap()
    }

    #[test]
    fn squared_distance_basics() {
        assert_eq!(squared_distance(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        assert_eq!(squared_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 25.0);
        assert!(matches!(squared_distance(&[0.0], &[0.0, 1.0]), Err(Error::Argument(_))));
    }

    #[test]
    fn equal_distances_give_uniform() {
        let p = dist(&[2.5; 10]);
        for &q in p.probs() {
            assert!((q - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_form_two_class() {
        let p = dist(&[0.0, 3f64.ln()]);
        assert!((p.probs()[0] - 0.75).abs() < 1e-15);
        assert!((p.probs()[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn large_distances_are_shift_invariant() {
        let a = dist(&[1000.0, 1001.0]);
        let b = dist(&[0.0, 1.0]);
        assert_eq!(a.probs(), b.probs());
        assert_eq!(a.shift(), 1000.0);
    }

    #[test]
    fn softmin_rejects_bad_inputs() {
        let one = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(softmin_distribution(&[0.0, 0.0], &one), Err(Error::Argument(_))));
        let two = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(softmin_distribution(&[f64::NAN, 0.0], &two), Err(Error::Numeric(_))));
    }

    #[test]
    fn ratio_loss_uniform_is_ln_c() {
        let t = ClassIndicator::one_hot(3, 10).unwrap();
        let l = distance_ratio_loss(&dist(&[4.0; 10]), &t).unwrap();
        assert!((l.loss - LN_10).abs() < 1e-12);
    }

    #[test]
    fn ratio_loss_vanishes_when_target_is_isolated() {
        let t = ClassIndicator::one_hot(0, 3).unwrap();
        let l = distance_ratio_loss(&dist(&[0.0, 1e4, 1e4]), &t).unwrap();
        assert_eq!(l.loss, 0.0);
    }

    #[test]
    fn ratio_loss_rejects_invalid_targets() {
        assert!(ClassIndicator::soft(vec![0.5, 0.6]).is_err());
        assert!(ClassIndicator::soft(vec![1.5, -0.5]).is_err());
        let t = ClassIndicator::one_hot(0, 3).unwrap();
        assert!(distance_ratio_loss(&dist(&[0.0, 1.0]), &t).is_err());
    }

    #[test]
    fn entropy_reference_values() {
        assert!((entropy_loss(&dist(&[1.0; 10])).loss - LN_10).abs() < 1e-12);
        // −(0.75 ln 0.75 + 0.25 ln 0.25), evaluated independently.
        assert!((entropy_loss(&dist(&[0.0, 3f64.ln()])).loss - 0.562_335_144_618_808_3).abs() < 1e-12);
        assert!(entropy_loss(&dist(&[0.0, 800.0, 900.0])).loss < 1e-300);
    }

    #[test]
    fn weights_outside_unit_interval_fail() {
        assert!(LossWeights::new(1.5, 0.0).is_err());
        assert!(LossWeights::new(0.5, -0.1).is_err());
        assert!(LossWeights::new(0.0, 1.0).is_ok());
    }

    #[test]
    fn zero_unlabeled_weight_reduces_to_ratio_loss() {
        let z = Matrix::from_rows(&[vec![0.0, 1.0], vec![2.0, -1.0], vec![-1.0, 0.5]]).unwrap();
        let xl = [0.3, 0.2];
        let xu = [1.0, 1.0];
        let t = ClassIndicator::one_hot(1, 3).unwrap();
        let w = LossWeights::new(0.7, 0.0).unwrap();
        let terms = combined_loss(&xl, &xu, &z, &t, w).unwrap();
        let direct = distance_ratio_loss(&softmin_distribution(&xl, &z).unwrap(), &t).unwrap();
        assert_eq!(terms.combined, 0.7 * direct.loss);
        assert!(terms.grad_unlabeled.iter().all(|&g| g == 0.0));
    }
}
