//! Nearest-neighbor classification in embedding space, repeated-split
//! evaluation and cluster diagnostics.

use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::data::{split_semi_supervised, Dataset, SemiSupSplit, TestSelection};
use crate::embednet::EmbeddingNet;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::objective::sq_dist;
use crate::rng::derive_seed;
use crate::trainer::{train, TrainConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnnConfig {
    pub k_values: Vec<usize>,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig { k_values: vec![1, 3, 5] }
    }
}

impl KnnConfig {
    pub fn validate(&self, reference_count: usize) -> Result<()> {
        if self.k_values.is_empty() {
            return Err(Error::arg("at least one k is required"));
        }
        for &k in &self.k_values {
            if k == 0 || k > reference_count {
                return Err(Error::arg(format!("k={k} must lie in 1..={reference_count}")));
            }
        }
        Ok(())
    }
}

/// Majority vote among the `k` nearest references by squared euclidean
/// distance.
///
/// Neighbors are ordered by `(distance, reference index)`, so equal distances
/// favor the lower index. When several classes share the top vote count, the
/// class of the nearest neighbor among them wins.
pub fn knn_classify(queries: &Matrix, refs: &Matrix, ref_labels: &[usize], k: usize) -> Result<Vec<usize>> {
    if refs.rows() == 0 {
        return Err(Error::arg("empty reference set"));
    }
    if ref_labels.len() != refs.rows() {
        return Err(Error::consistency(format!("{} reference rows but {} labels", refs.rows(), ref_labels.len())));
    }
    if k == 0 || k > refs.rows() {
        return Err(Error::arg(format!("k={k} must lie in 1..={}", refs.rows())));
    }
    if queries.cols() != refs.cols() {
        return Err(Error::arg(format!("query dimension {} differs from reference dimension {}", queries.cols(), refs.cols())));
    }
    let classes = ref_labels.iter().max().map_or(0, |&m| m + 1);
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(refs.rows());
    let mut votes = vec![0usize; classes];
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));

    let mut out = Vec::with_capacity(queries.rows());
    for q in 0..queries.rows() {
        let query = queries.row(q);
        dists.clear();
        dists.extend((0..refs.rows()).map(|r| (sq_dist(query, refs.row(r)), r)));
        if k < dists.len() {
            dists.select_nth_unstable_by(k - 1, by_distance);
        }
        let nearest = &mut dists[..k];
        nearest.sort_unstable_by(by_distance);

        votes.fill(0);
        for &(_, r) in nearest.iter() {
            votes[ref_labels[r]] += 1;
        }
        let top = votes.iter().copied().max().unwrap_or(0);
        let winner = nearest.iter().map(|&(_, r)| ref_labels[r]).find(|&c| votes[c] == top).expect("k >= 1");
        out.push(winner);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub mean: f64,
    /// Sample standard deviation; 0 when there is a single repeat.
    pub std: f64,
    pub n: usize,
}

impl Spread {
    pub fn of(values: &[f64]) -> Spread {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n.max(1) as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
        };
        Spread { mean, std, n }
    }

    /// A single observation carries no spread information.
    pub fn is_degenerate(&self) -> bool {
        self.n < 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub k_values: Vec<usize>,
    /// Test error rate per entry of `k_values`.
    pub errors: Vec<f64>,
    pub best_k: usize,
    pub best_error: f64,
    /// `confusion[true][predicted]` at `best_k`.
    pub confusion: Vec<Vec<usize>>,
    pub test_count: usize,
    /// Present when the report aggregates repeated splits.
    pub repeats: Option<RepeatSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatSummary {
    pub best_error: Spread,
    pub per_k: Vec<Spread>,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>6}  {:>10}", "k", "error %");
        for (k, e) in self.k_values.iter().zip(&self.errors) {
            let _ = writeln!(out, "{:>6}  {:>10.3}", k, 100.0 * e);
        }
        let _ = writeln!(out, "{:>6}  {:>10.3}  (k={})", "best", 100.0 * self.best_error, self.best_k);
        if let Some(rep) = &self.repeats {
            let _ = writeln!(
                out,
                "over {} splits: best-k error {:.3}% ± {:.3}{}",
                rep.best_error.n,
                100.0 * rep.best_error.mean,
                100.0 * rep.best_error.std,
                if rep.best_error.is_degenerate() { " (single split, std undefined)" } else { "" }
            );
        }
        out
    }

    /// Line-delimited `key=value` records.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "test_count={}", self.test_count);
        for (k, e) in self.k_values.iter().zip(&self.errors) {
            let _ = writeln!(out, "error_k{k}={e}");
        }
        let _ = writeln!(out, "best_k={}", self.best_k);
        let _ = writeln!(out, "best_error={}", self.best_error);
        if let Some(rep) = &self.repeats {
            let _ = writeln!(out, "repeats={}", rep.best_error.n);
            let _ = writeln!(out, "best_error_mean={}", rep.best_error.mean);
            let _ = writeln!(out, "best_error_std={}", rep.best_error.std);
            let _ = writeln!(out, "degenerate={}", rep.best_error.is_degenerate());
            for (k, s) in self.k_values.iter().zip(&rep.per_k) {
                let _ = writeln!(out, "error_k{k}_mean={}", s.mean);
                let _ = writeln!(out, "error_k{k}_std={}", s.std);
            }
        }
        for (t, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(out, "confusion_{t}={}", cells.join(" "));
        }
        out
    }
}

/// kNN error report for arbitrary query/reference feature matrices. Used on
/// embeddings and, as a baseline, on raw inputs.
pub fn knn_report(
    queries: &Matrix,
    query_labels: &[usize],
    refs: &Matrix,
    ref_labels: &[usize],
    classes: usize,
    knn: &KnnConfig,
) -> Result<EvalReport> {
    knn.validate(refs.rows())?;
    if queries.rows() == 0 {
        return Err(Error::arg("empty test set"));
    }
    let mut errors = Vec::with_capacity(knn.k_values.len());
    let mut predictions = Vec::with_capacity(knn.k_values.len());
    for &k in &knn.k_values {
        let pred = knn_classify(queries, refs, ref_labels, k)?;
        let wrong = pred.iter().zip(query_labels).filter(|(p, t)| p != t).count();
        errors.push(wrong as f64 / queries.rows() as f64);
        predictions.push(pred);
    }
    // First minimum, so ties favor the earlier (smaller) k.
    let best = errors
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("non-empty k list");
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&t, &p) in query_labels.iter().zip(&predictions[best]) {
        confusion[t][p] += 1;
    }
    Ok(EvalReport {
        k_values: knn.k_values.clone(),
        best_k: knn.k_values[best],
        best_error: errors[best],
        errors,
        confusion,
        test_count: queries.rows(),
        repeats: None,
    })
}

/// Eval-mode embedding of the listed dataset rows, in chunks.
pub fn embed_rows(net: &EmbeddingNet, ds: &Dataset, idx: &[usize]) -> Result<Matrix> {
    const CHUNK: usize = 2048;
    let mut data = Vec::with_capacity(idx.len() * net.output_dim());
    for chunk in idx.chunks(CHUNK) {
        let emb = net.embed(&ds.features().select_rows(chunk))?;
        data.extend_from_slice(emb.as_slice());
    }
    Matrix::from_vec(idx.len(), net.output_dim(), data)
}

/// Classifies the test set by its nearest labeled samples in embedding space.
pub fn evaluate(net: &EmbeddingNet, ds: &Dataset, split: &SemiSupSplit, knn: &KnnConfig) -> Result<EvalReport> {
    if split.test_idx.is_empty() {
        return Err(Error::arg("empty test set"));
    }
    if net.input_dim() != ds.dim() {
        return Err(Error::consistency(format!("network expects {} inputs, dataset has {}", net.input_dim(), ds.dim())));
    }
    let refs = embed_rows(net, ds, &split.labeled_idx)?;
    let queries = embed_rows(net, ds, &split.test_idx)?;
    let ref_labels: Vec<usize> = split.labeled_idx.iter().map(|&i| ds.label(i)).collect();
    let test_labels: Vec<usize> = split.test_idx.iter().map(|&i| ds.label(i)).collect();
    knn_report(&queries, &test_labels, &refs, &ref_labels, ds.class_count(), knn)
}

/// The same kNN protocol on raw input features.
pub fn evaluate_raw(ds: &Dataset, split: &SemiSupSplit, knn: &KnnConfig) -> Result<EvalReport> {
    let refs = ds.features().select_rows(&split.labeled_idx);
    let queries = ds.features().select_rows(&split.test_idx);
    let ref_labels: Vec<usize> = split.labeled_idx.iter().map(|&i| ds.label(i)).collect();
    let test_labels: Vec<usize> = split.test_idx.iter().map(|&i| ds.label(i)).collect();
    knn_report(&queries, &test_labels, &refs, &ref_labels, ds.class_count(), knn)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub labeled_per_class: usize,
    pub test: TestSelection,
    pub train: TrainConfig,
    pub knn: KnnConfig,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolReport {
    pub runs: Vec<EvalReport>,
    pub summary: EvalReport,
}

/// Repeats split → train → evaluate with seeds derived from the master seed
/// and aggregates the best-k error as mean ± sample standard deviation.
pub fn multi_split_protocol(ds: &Dataset, cfg: &ProtocolConfig, n_repeats: usize) -> Result<ProtocolReport> {
    if n_repeats == 0 {
        return Err(Error::arg("n_repeats must be at least 1"));
    }
    let mut runs = Vec::with_capacity(n_repeats);
    for r in 0..n_repeats as u64 {
        let split = split_semi_supervised(ds, cfg.labeled_per_class, &cfg.test, derive_seed(cfg.master_seed, 2 * r))?;
        let mut train_cfg = cfg.train.clone();
        train_cfg.seed = derive_seed(cfg.master_seed, 2 * r + 1);
        let (net, _) = train(ds, &split, &train_cfg)?;
        runs.push(evaluate(&net, ds, &split, &cfg.knn)?);
    }
    let best: Vec<f64> = runs.iter().map(|r| r.best_error).collect();
    let per_k: Vec<Spread> = (0..cfg.knn.k_values.len())
        .map(|i| Spread::of(&runs.iter().map(|r| r.errors[i]).collect::<Vec<_>>()))
        .collect();
    let mean_errors: Vec<f64> = per_k.iter().map(|s| s.mean).collect();
    let classes = ds.class_count();
    let mut confusion = vec![vec![0usize; classes]; classes];
    for run in &runs {
        for (t, row) in run.confusion.iter().enumerate() {
            for (p, c) in row.iter().enumerate() {
                confusion[t][p] += c;
            }
        }
    }
    let best_error = Spread::of(&best);
    let best_idx = mean_errors
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(Ordering::Equal))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let summary = EvalReport {
        k_values: cfg.knn.k_values.clone(),
        errors: mean_errors,
        best_k: cfg.knn.k_values[best_idx],
        best_error: best_error.mean,
        confusion,
        test_count: runs.iter().map(|r| r.test_count).sum(),
        repeats: Some(RepeatSummary { best_error, per_k }),
    };
    Ok(ProtocolReport { runs, summary })
}

/// Ratio of between-class to within-class spread.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpreadRatio {
    Finite(f64),
    /// Within-class spread is zero while centroids are apart.
    Infinite,
    /// Both spreads are zero.
    Undefined,
}

impl SpreadRatio {
    /// Numeric value, with `∞` and `NaN` as the sentinels.
    pub fn value(&self) -> f64 {
        match *self {
            SpreadRatio::Finite(v) => v,
            SpreadRatio::Infinite => f64::INFINITY,
            SpreadRatio::Undefined => f64::NAN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterMetrics {
    /// Mean euclidean distance over all pairs of class centroids.
    pub inter_centroid: f64,
    /// Mean euclidean distance of samples to their class centroid.
    pub intra_spread: f64,
    pub ratio: SpreadRatio,
}

pub fn cluster_metrics(embeddings: &Matrix, labels: &[usize]) -> Result<ClusterMetrics> {
    if embeddings.rows() != labels.len() {
        return Err(Error::consistency(format!("{} embeddings but {} labels", embeddings.rows(), labels.len())));
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let dim = embeddings.cols();
    let mut sums = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for (r, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(embeddings.row(r)) {
            *s += v;
        }
    }
    let mut centroids: Vec<Option<Vec<f64>>> = Vec::with_capacity(classes);
    for (k, (sum, &n)) in sums.into_iter().zip(&counts).enumerate() {
        if n == 0 {
            log::warn!("class {k} has no samples; skipped in cluster metrics");
            centroids.push(None);
        } else {
            centroids.push(Some(sum.into_iter().map(|s| s / n as f64).collect()));
        }
    }
    let present: Vec<&Vec<f64>> = centroids.iter().flatten().collect();
    if present.len() < 2 {
        return Err(Error::arg("cluster metrics need at least 2 classes present"));
    }
    let mut pair_sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..present.len() {
        for j in i + 1..present.len() {
            pair_sum += sq_dist(present[i], present[j]).sqrt();
            pairs += 1;
        }
    }
    let inter_centroid = pair_sum / pairs as f64;
    let intra_spread = labels
        .iter()
        .enumerate()
        .map(|(r, &l)| sq_dist(embeddings.row(r), centroids[l].as_ref().expect("present")).sqrt())
        .sum::<f64>()
        / labels.len() as f64;
    let ratio = if intra_spread > 0.0 {
        SpreadRatio::Finite(inter_centroid / intra_spread)
    } else if inter_centroid > 0.0 {
        SpreadRatio::Infinite
    } else {
        SpreadRatio::Undefined
    };
    Ok(ClusterMetrics { inter_centroid, intra_spread, ratio })
}
