//! Datasets, IDX ingestion, synthetic clusters and semi-supervised splits.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{purpose, SeededStream};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Feature matrix plus class labels.
///
/// The dataset is the only holder of ground-truth labels. Training code never
/// sees it directly: it receives a [`LabeledView`], which answers label
/// queries for the labeled part of a split only. Evaluation reads test labels
/// from here.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::consistency(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
            return Err(Error::arg(format!("label {l} at row {i} is not below class count {class_count}")));
        }
        if labels.len() < class_count {
            return Err(Error::arg(format!(
                "{} samples cannot cover {class_count} classes",
                labels.len()
            )));
        }
        Ok(Dataset { features, labels, class_count })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    /// Ground-truth label of sample `i`. Intended for evaluation and
    /// reporting; training goes through [`LabeledView`].
    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Appends `other`'s samples after this dataset's.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.dim() != other.dim() {
            return Err(Error::consistency(format!(
                "cannot concatenate datasets of dimension {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        let mut data = self.features.as_slice().to_vec();
        data.extend_from_slice(other.features.as_slice());
        let features = Matrix::from_vec(self.len() + other.len(), self.dim(), data)?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Dataset::new(features, labels, self.class_count.max(other.class_count))
    }

    /// Maps every feature row through a random Gaussian linear map
    /// `ℝ^d → ℝ^out_dim` with entries drawn from `N(0, 1/d)`.
    pub fn project_random_linear(&self, out_dim: usize, seed: u64) -> Result<Dataset> {
        if out_dim == 0 {
            return Err(Error::arg("projection dimension must be positive"));
        }
        let mut stream = SeededStream::new(seed, purpose::PROJECTION);
        let scale = 1.0 / (self.dim() as f64).sqrt();
        let map: Vec<f64> = (0..out_dim * self.dim())
            .map(|_| {
                let z: f64 = StandardNormal.sample(stream.rng());
                z * scale
            })
            .collect();
        let map = Matrix::from_vec(out_dim, self.dim(), map)?;
        Dataset::new(self.features.matmul_transposed(&map), self.labels.clone(), self.class_count)
    }
}

fn read_u32_be(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| truncated(what))
}

fn truncated(what: &str) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, format!("{what} is truncated")))
}

/// Parses IDX image and label buffers. Pixels are scaled from `[0,255]` to
/// `[0,1]`; the class count is one more than the largest label.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = read_u32_be(images, 0, "image file")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(format!(
            "image file magic is {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let magic = read_u32_be(labels, 0, "label file")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(format!(
            "label file magic is {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }

    let n_images = read_u32_be(images, 4, "image file")? as usize;
    let rows = read_u32_be(images, 8, "image file")? as usize;
    let cols = read_u32_be(images, 12, "image file")? as usize;
    let n_labels = read_u32_be(labels, 4, "label file")? as usize;
    if n_images != n_labels {
        return Err(Error::consistency(format!("{n_images} images but {n_labels} labels")));
    }

    let pixels = rows * cols;
    let image_bytes = images.get(16..16 + n_images * pixels).ok_or_else(|| truncated("image file"))?;
    let label_bytes = labels.get(8..8 + n_labels).ok_or_else(|| truncated("label file"))?;

    let data: Vec<f64> = image_bytes.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = label_bytes.iter().map(|&l| usize::from(l)).collect();
    let class_count = labels.iter().max().map_or(0, |&m| m + 1);
    Dataset::new(Matrix::from_vec(n_images, pixels, data)?, labels, class_count)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    parse_idx(&images, &labels)
}

/// Encodes raw `u8` images (`count × rows × cols`, row-major) in IDX form.
pub fn encode_idx_images(pixels: &[u8], count: usize, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if pixels.len() != count * rows * cols {
        return Err(Error::consistency(format!(
            "{} pixel bytes for {count} images of {rows}x{cols}",
            pixels.len()
        )));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for v in [count, rows, cols] {
        out.extend_from_slice(&(v as u32).to_be_bytes());
    }
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Parameters for [`make_gaussian_clusters`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Standard deviation of every coordinate around its centroid.
    pub spread: f64,
    /// Minimum distance between any two centroids.
    pub separation: f64,
}

/// Isotropic Gaussian clusters, one per class, stored class-major.
///
/// Centroids are drawn uniformly from a cube by rejection until every pair is
/// at least `separation` apart; the cube grows if placement keeps failing.
pub fn make_gaussian_clusters(spec: ClusterSpec, seed: u64) -> Result<Dataset> {
    let ClusterSpec { classes, per_class, dim, spread, separation } = spec;
    if classes < 2 {
        return Err(Error::arg("need at least 2 classes"));
    }
    if per_class < 1 || dim < 1 {
        return Err(Error::arg("per_class and dim must be positive"));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::arg(format!("spread must be positive, got {spread}")));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::arg(format!("separation must be positive, got {separation}")));
    }

    let mut stream = SeededStream::new(seed, purpose::CLUSTERS);
    let mut side = separation * 2.0 * (classes as f64).powf(1.0 / dim as f64).max(1.0);
    let centroids = 'placement: loop {
        let mut placed: Vec<Vec<f64>> = Vec::with_capacity(classes);
        let mut attempts = 0usize;
        while placed.len() < classes {
            attempts += 1;
            if attempts > 10_000 {
                side *= 1.5;
                continue 'placement;
            }
            let candidate: Vec<f64> =
                (0..dim).map(|_| rand::Rng::random::<f64>(stream.rng()) * side).collect();
            let far_enough = placed.iter().all(|p| {
                let d2: f64 = p.iter().zip(&candidate).map(|(a, b)| (a - b) * (a - b)).sum();
                d2 >= separation * separation
            });
            if far_enough {
                placed.push(candidate);
            }
        }
        break placed;
    };

    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (class, centroid) in centroids.iter().enumerate() {
        for _ in 0..per_class {
            for &c in centroid {
                let z: f64 = StandardNormal.sample(stream.rng());
                data.push(c + spread * z);
            }
            labels.push(class);
        }
    }
    Dataset::new(Matrix::from_vec(n, dim, data)?, labels, classes)
}

/// How the held-out test set is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum TestSelection {
    None,
    /// Per-class fraction, rounded to the nearest count.
    Fraction(f64),
    /// Fixed indices, e.g. the official test files appended to a training set.
    Explicit(Vec<usize>),
}

/// Index partition of a dataset into labeled, unlabeled and test samples.
/// All three lists are sorted ascending and pairwise disjoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemiSupSplit {
    pub labeled_idx: Vec<usize>,
    pub unlabeled_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
}

pub fn split_semi_supervised(
    ds: &Dataset,
    labeled_per_class: usize,
    test: &TestSelection,
    seed: u64,
) -> Result<SemiSupSplit> {
    if labeled_per_class == 0 {
        return Err(Error::arg("labeled_per_class must be at least 1"));
    }
    let mut stream = SeededStream::new(seed, purpose::SPLIT);

    let mut in_test = vec![false; ds.len()];
    let mut test_idx = Vec::new();
    match test {
        TestSelection::None => {}
        TestSelection::Explicit(idx) => {
            for &i in idx {
                if i >= ds.len() {
                    return Err(Error::arg(format!("test index {i} out of range for {} samples", ds.len())));
                }
                if !in_test[i] {
                    in_test[i] = true;
                    test_idx.push(i);
                }
            }
        }
        TestSelection::Fraction(f) => {
            if !(0.0..1.0).contains(f) {
                return Err(Error::arg(format!("test fraction must lie in [0,1), got {f}")));
            }
        }
    }

    let mut labeled_idx = Vec::with_capacity(labeled_per_class * ds.class_count());
    let mut unlabeled_idx = Vec::new();
    for class in 0..ds.class_count() {
        let mut members: Vec<usize> =
            (0..ds.len()).filter(|&i| ds.label(i) == class && !in_test[i]).collect();
        members.shuffle(stream.rng());
        if let TestSelection::Fraction(f) = test {
            let n_test = (f * members.len() as f64).round() as usize;
            test_idx.extend(members.drain(..n_test));
        }
        if members.len() < labeled_per_class {
            return Err(Error::arg(format!(
                "class {class} has {} training samples, fewer than the {labeled_per_class} requested",
                members.len()
            )));
        }
        labeled_idx.extend_from_slice(&members[..labeled_per_class]);
        unlabeled_idx.extend_from_slice(&members[labeled_per_class..]);
    }
    labeled_idx.sort_unstable();
    unlabeled_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(SemiSupSplit { labeled_idx, unlabeled_idx, test_idx, seed })
}

impl SemiSupSplit {
    /// Label access restricted to the labeled part of the split.
    pub fn labeled_view<'a>(&'a self, ds: &'a Dataset) -> LabeledView<'a> {
        LabeledView { ds, split: self }
    }

    /// Checks the split against a dataset: indices in range, lists disjoint.
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        let mut seen = HashSet::new();
        for (name, list) in
            [("labeled", &self.labeled_idx), ("unlabeled", &self.unlabeled_idx), ("test", &self.test_idx)]
        {
            for &i in list.iter() {
                if i >= ds.len() {
                    return Err(Error::consistency(format!(
                        "{name} index {i} out of range for {} samples",
                        ds.len()
                    )));
                }
                if !seen.insert(i) {
                    return Err(Error::consistency(format!("index {i} appears in more than one list")));
                }
            }
        }
        Ok(())
    }

    /// Plain-text manifest: a `seed=<n>` header followed by one
    /// `name=<space separated indices>` line per list.
    pub fn to_manifest(&self) -> String {
        let mut out = format!("seed={}\n", self.seed);
        for (name, list) in
            [("labeled", &self.labeled_idx), ("unlabeled", &self.unlabeled_idx), ("test", &self.test_idx)]
        {
            out.push_str(name);
            out.push('=');
            for (k, i) in list.iter().enumerate() {
                if k > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{i}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_manifest(text: &str) -> Result<SemiSupSplit> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::format("empty split manifest"))?;
        let seed = header
            .strip_prefix("seed=")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::format(format!("split manifest header must be `seed=<n>`, got `{header}`")))?;
        let mut lists: [Option<Vec<usize>>; 3] = [None, None, None];
        for line in lines {
            let (name, rest) =
                line.split_once('=').ok_or_else(|| Error::format(format!("malformed manifest line `{line}`")))?;
            let slot = match name.trim() {
                "labeled" => 0,
                "unlabeled" => 1,
                "test" => 2,
                other => return Err(Error::format(format!("unknown manifest list `{other}`"))),
            };
            let idx = rest
                .split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|_| Error::format(format!("bad index `{t}`"))))
                .collect::<Result<Vec<_>>>()?;
            lists[slot] = Some(idx);
        }
        let [labeled, unlabeled, test] = lists;
        let missing = |n: &str| Error::format(format!("split manifest lacks the `{n}` list"));
        Ok(SemiSupSplit {
            labeled_idx: labeled.ok_or_else(|| missing("labeled"))?,
            unlabeled_idx: unlabeled.ok_or_else(|| missing("unlabeled"))?,
            test_idx: test.ok_or_else(|| missing("test"))?,
            seed,
        })
    }
}

/// Read access to a dataset that only reveals labels of labeled samples.
#[derive(Debug, Clone, Copy)]
pub struct LabeledView<'a> {
    ds: &'a Dataset,
    split: &'a SemiSupSplit,
}

impl<'a> LabeledView<'a> {
    pub fn features(&self) -> &'a Matrix {
        self.ds.features()
    }

    pub fn class_count(&self) -> usize {
        self.ds.class_count()
    }

    pub fn split(&self) -> &'a SemiSupSplit {
        self.split
    }

    /// Labeled indices grouped by class.
    pub fn labeled_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.ds.class_count()];
        for &i in &self.split.labeled_idx {
            groups[self.ds.label(i)].push(i);
        }
        groups
    }

    /// Label of `i` if it belongs to the labeled set.
    pub fn label(&self, i: usize) -> Option<usize> {
        self.split.labeled_idx.binary_search(&i).ok().map(|_| self.ds.label(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_pair(n_images: usize, n_labels: usize) -> (Vec<u8>, Vec<u8>) {
        let pixels: Vec<u8> = (0..n_images * 4).map(|i| (i * 37 % 256) as u8).collect();
        let labels: Vec<u8> = (0..n_labels).map(|i| (i % 3) as u8).collect();
        (encode_idx_images(&pixels, n_images, 2, 2).unwrap(), encode_idx_labels(&labels))
    }

    #[test]
    fn idx_roundtrip_recovers_pixel_bytes() {
        let pixels: Vec<u8> = vec![0, 1, 2, 3, 128, 200, 254, 255, 7, 9, 11, 13];
        let images = encode_idx_images(&pixels, 3, 2, 2).unwrap();
        let labels = encode_idx_labels(&[2, 0, 1]);
        let ds = parse_idx(&images, &labels).unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.class_count()), (3, 4, 3));
        let recovered: Vec<u8> = ds.features().as_slice().iter().map(|v| (v * 255.0).round() as u8).collect();
        assert_eq!(recovered, pixels);
        assert_eq!(ds.labels(), &[2, 0, 1]);
    }

    #[test]
    fn idx_bad_magic_is_format_error() {
        let (mut images, labels) = idx_pair(3, 3);
        images[..4].copy_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(parse_idx(&images, &labels), Err(Error::Format(_))));
    }

    #[test]
    fn idx_count_mismatch_is_consistency_error() {
        let (images, labels) = idx_pair(100, 99);
        assert!(matches!(parse_idx(&images, &labels), Err(Error::Consistency(_))));
    }

    #[test]
    fn idx_truncation_is_io_error() {
        let (images, labels) = idx_pair(5, 5);
        assert!(matches!(parse_idx(&images[..images.len() - 1], &labels), Err(Error::Io(_))));
        assert!(matches!(parse_idx(&images[..10], &labels), Err(Error::Io(_))));
    }

    #[test]
    fn minimal_cluster_set() {
        let spec = ClusterSpec { classes: 2, per_class: 1, dim: 2, spread: 0.1, separation: 1.0 };
        let ds = make_gaussian_clusters(spec, 3).unwrap();
        assert_eq!(ds.len(), 2);
        assert_ne!(ds.label(0), ds.label(1));
    }

    #[test]
    fn clusters_are_deterministic() {
        let spec = ClusterSpec { classes: 4, per_class: 10, dim: 3, spread: 0.5, separation: 2.0 };
        let a = make_gaussian_clusters(spec, 11).unwrap();
        let b = make_gaussian_clusters(spec, 11).unwrap();
        let bits = |d: &Dataset| d.features().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.labels(), b.labels());
    }

    #[test]
    fn cluster_arguments_are_validated() {
        let ok = ClusterSpec { classes: 3, per_class: 2, dim: 2, spread: 1.0, separation: 1.0 };
        for bad in [
            ClusterSpec { spread: 0.0, ..ok },
            ClusterSpec { spread: -1.0, ..ok },
            ClusterSpec { separation: 0.0, ..ok },
            ClusterSpec { classes: 1, ..ok },
        ] {
            assert!(matches!(make_gaussian_clusters(bad, 0), Err(Error::Argument(_))));
        }
    }

    #[test]
    fn fully_labeled_split_has_no_unlabeled() {
        let spec = ClusterSpec { classes: 3, per_class: 5, dim: 2, spread: 1.0, separation: 3.0 };
        let ds = make_gaussian_clusters(spec, 1).unwrap();
        let split = split_semi_supervised(&ds, 5, &TestSelection::None, 9).unwrap();
        assert_eq!(split.labeled_idx.len(), 15);
        assert!(split.unlabeled_idx.is_empty());
        assert!(split.test_idx.is_empty());
    }

    #[test]
    fn insufficient_class_is_rejected() {
        let spec = ClusterSpec { classes: 3, per_class: 5, dim: 2, spread: 1.0, separation: 3.0 };
        let ds = make_gaussian_clusters(spec, 1).unwrap();
        let err = split_semi_supervised(&ds, 3, &TestSelection::Fraction(0.5), 9).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn manifest_roundtrip_and_header() {
        let spec = ClusterSpec { classes: 2, per_class: 6, dim: 2, spread: 1.0, separation: 3.0 };
        let ds = make_gaussian_clusters(spec, 1).unwrap();
        let split = split_semi_supervised(&ds, 2, &TestSelection::Fraction(0.34), 77).unwrap();
        let text = split.to_manifest();
        assert!(text.starts_with("seed=77\n"));
        assert_eq!(SemiSupSplit::from_manifest(&text).unwrap(), split);
        assert!(SemiSupSplit::from_manifest("labeled=1 2\n").is_err());
    }

    #[test]
    fn labeled_view_hides_other_labels() {
        let spec = ClusterSpec { classes: 2, per_class: 6, dim: 2, spread: 1.0, separation: 3.0 };
        let ds = make_gaussian_clusters(spec, 1).unwrap();
        let split = split_semi_supervised(&ds, 2, &TestSelection::Fraction(0.34), 77).unwrap();
        let view = split.labeled_view(&ds);
        for &i in &split.labeled_idx {
            assert_eq!(view.label(i), Some(ds.label(i)));
        }
        for &i in split.unlabeled_idx.iter().chain(&split.test_idx) {
            assert_eq!(view.label(i), None);
        }
    }
}
