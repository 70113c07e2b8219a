//! Plain-text `key = value` run configuration.
//!
//! One assignment per line, `#` starts a comment. Relative paths are resolved
//! against the directory of the file that mentions them. Keys under
//! `manifest.` are written by `train` and ignored on input, except for
//! `manifest.dataset_sha256`, which pins the dataset contents.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nbe_core::data::{load_idx, make_gaussian_clusters, ClusterSpec, TestSelection};
use nbe_core::embednet::{mlp_specs, LayerSpec, NormOrder, BN_EPSILON};
use nbe_core::objective::LossWeights;
use nbe_core::{Dataset, KnnConfig, Schedule, TrainConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        /// Official test files, appended after the training rows and used
        /// as the test set.
        test: Option<(PathBuf, PathBuf)>,
        /// Keep only the first `n` training (and test) rows; 0 keeps all.
        train_limit: usize,
        test_limit: usize,
    },
    Clusters {
        spec: ClusterSpec,
        seed: u64,
        /// Pass the clusters through a random linear map of this width; 0
        /// leaves them as generated.
        project_dim: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataSource,
    pub labeled_per_class: usize,
    /// Per-class held-out fraction, used when no test files are given.
    pub test_fraction: f64,
    pub split_seed: u64,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub batch_norm: bool,
    pub norm_order: NormOrder,
    /// Batch-normalize the embedding itself (after the final affine layer).
    pub output_batch_norm: bool,
    pub weights: LossWeights,
    pub batch_size: usize,
    pub epochs: u64,
    pub iterations_per_epoch: Option<u64>,
    pub schedule: Schedule,
    pub momentum: f64,
    pub seed: u64,
    pub checkpoint_period: u64,
    pub bn_momentum: f64,
    pub knn: KnnConfig,
    pub dataset_sha256: Option<String>,
}

/// Raw assignments with the directory each one came from.
#[derive(Debug, Default, Clone)]
pub struct Assignments {
    values: BTreeMap<String, (String, PathBuf)>,
}

impl Assignments {
    pub fn parse(text: &str, origin: &Path) -> CliResult<Self> {
        let mut out = Assignments::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            out.set(key.trim(), value.trim(), origin);
        }
        Ok(out)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let origin = std::path::absolute(path.parent().unwrap_or(Path::new("")))
            .map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, &origin).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    pub fn set(&mut self, key: &str, value: &str, origin: &Path) {
        self.values.insert(key.to_string(), (value.to_string(), origin.to_path_buf()));
    }

    /// Applies `key=value` overrides given on the command line.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> CliResult<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("override `{o}` must look like key=value")))?;
            let cwd = std::env::current_dir().map_err(|e| CliError::io(Path::new("."), e))?;
            self.set(k.trim(), v.trim(), &cwd);
        }
        Ok(())
    }
}

/// Pulls typed values out of the assignments, remembering which keys were
/// used so leftovers can be reported.
struct Reader {
    values: BTreeMap<String, (String, PathBuf)>,
}

impl Reader {
    fn take(&mut self, key: &str) -> Option<String> {
        self.values.remove(key).map(|(v, _)| v)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> CliResult<T> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| CliError::usage(format!("{key}: cannot parse `{v}`"))),
        }
    }

    fn required<T: std::str::FromStr>(&mut self, key: &str) -> CliResult<T> {
        let v = self.take(key).ok_or_else(|| CliError::usage(format!("{key} is required")))?;
        v.parse().map_err(|_| CliError::usage(format!("{key}: cannot parse `{v}`")))
    }

    fn path(&mut self, key: &str) -> Option<PathBuf> {
        self.values.remove(key).filter(|(v, _)| !v.is_empty()).map(|(v, origin)| origin.join(v))
    }

    fn list(&mut self, key: &str, default: &[usize]) -> CliResult<Vec<usize>> {
        match self.take(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(|t| t.parse().map_err(|_| CliError::usage(format!("{key}: cannot parse `{t}`"))))
                .collect(),
        }
    }
}

fn unit_interval(key: &str, v: f64) -> CliResult<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(CliError::usage(format!("{key} must lie in [0, 1], got {v}")))
    }
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> CliResult<Self> {
        let mut a = Assignments::read(path)?;
        a.apply_overrides(overrides)?;
        Self::from_assignments(a)
    }

    pub fn from_assignments(a: Assignments) -> CliResult<Self> {
        let mut r = Reader { values: a.values };
        let data = match r.take("data.kind").as_deref() {
            Some("idx") => {
                let train_images = r.path("data.train_images").ok_or_else(|| CliError::usage("data.train_images is required"))?;
                let train_labels = r.path("data.train_labels").ok_or_else(|| CliError::usage("data.train_labels is required"))?;
                let test = match (r.path("data.test_images"), r.path("data.test_labels")) {
                    (Some(i), Some(l)) => Some((i, l)),
                    (None, None) => None,
                    _ => return Err(CliError::usage("data.test_images and data.test_labels go together")),
                };
                DataSource::Idx {
                    train_images,
                    train_labels,
                    test,
                    train_limit: r.parse("data.train_limit", 0)?,
                    test_limit: r.parse("data.test_limit", 0)?,
                }
            }
            Some("clusters") => DataSource::Clusters {
                spec: ClusterSpec {
                    classes: r.required("clusters.classes")?,
                    per_class: r.required("clusters.per_class")?,
                    dim: r.required("clusters.dim")?,
                    spread: r.parse("clusters.spread", 1.0)?,
                    separation: r.parse("clusters.separation", 4.0)?,
                },
                seed: r.parse("clusters.seed", 0)?,
                project_dim: r.parse("clusters.project_dim", 0)?,
            },
            Some(other) => return Err(CliError::usage(format!("data.kind must be `idx` or `clusters`, got `{other}`"))),
            None => return Err(CliError::usage("data.kind is required")),
        };

        let lambda_l = unit_interval("lambda_l", r.parse("lambda_l", 1.0)?)?;
        let lambda_u = unit_interval("lambda_u", r.parse("lambda_u", 1.0)?)?;
        let test_fraction: f64 = r.parse("test_fraction", 0.0)?;
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(CliError::usage(format!("test_fraction must lie in [0, 1), got {test_fraction}")));
        }
        let norm_order = match r.take("norm_order").as_deref() {
            None | Some("bn_relu") => NormOrder::BatchNormThenRelu,
            Some("relu_bn") => NormOrder::ReluThenBatchNorm,
            Some(other) => return Err(CliError::usage(format!("norm_order must be `bn_relu` or `relu_bn`, got `{other}`"))),
        };
        let iterations_per_epoch = match r.take("iterations_per_epoch").as_deref() {
            None | Some("auto") => None,
            Some(v) => Some(v.parse().map_err(|_| CliError::usage(format!("iterations_per_epoch: cannot parse `{v}`")))?),
        };
        let defaults = Schedule::default();
        let cfg = RunConfig {
            data,
            labeled_per_class: r.parse("labeled_per_class", 10)?,
            test_fraction,
            split_seed: r.parse("split_seed", 0)?,
            hidden: r.list("hidden", &[256, 128, 64])?,
            embedding_dim: r.parse("embedding_dim", 32)?,
            batch_norm: r.parse("batch_norm", true)?,
            norm_order,
            output_batch_norm: r.parse("output_batch_norm", false)?,
            weights: LossWeights::new(lambda_l, lambda_u)?,
            batch_size: r.parse("batch_size", 32)?,
            epochs: r.parse("epochs", 90)?,
            iterations_per_epoch,
            schedule: Schedule {
                base_lr: r.parse("base_lr", defaults.base_lr)?,
                decay_factor: r.parse("decay_factor", defaults.decay_factor)?,
                decay_period: r.parse("decay_period", defaults.decay_period)?,
            },
            momentum: r.parse("momentum", 0.9)?,
            seed: r.parse("seed", 0)?,
            checkpoint_period: r.parse("checkpoint_period", 0)?,
            bn_momentum: r.parse("bn_momentum", nbe_core::embednet::BN_MOMENTUM)?,
            knn: KnnConfig { k_values: r.list("k_values", &[1, 3, 5])? },
            dataset_sha256: r.take("manifest.dataset_sha256"),
        };
        let unknown: Vec<String> = r.values.into_keys().filter(|k| !k.starts_with("manifest.")).collect();
        if !unknown.is_empty() {
            return Err(CliError::usage(format!("unknown config keys: {}", unknown.join(", "))));
        }
        if cfg.embedding_dim == 0 {
            return Err(CliError::usage("embedding_dim must be at least 1"));
        }
        cfg.train_config_unchecked(0).validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(cfg)
    }

    fn train_config_unchecked(&self, input_dim: usize) -> TrainConfig {
        let mut specs = mlp_specs(input_dim.max(1), &self.hidden, self.embedding_dim, self.batch_norm, self.norm_order);
        if self.output_batch_norm {
            specs.push(LayerSpec::BatchNorm { dim: self.embedding_dim, epsilon: BN_EPSILON });
        }
        TrainConfig {
            weights: self.weights,
            batch_size: self.batch_size,
            epochs: self.epochs,
            iterations_per_epoch: self.iterations_per_epoch,
            schedule: self.schedule,
            momentum: self.momentum,
            seed: self.seed,
            specs,
            checkpoint_period: self.checkpoint_period,
            bn_momentum: self.bn_momentum,
        }
    }

    /// Trainer configuration for a dataset of the given input width.
    pub fn train_config(&self, input_dim: usize) -> TrainConfig {
        self.train_config_unchecked(input_dim)
    }

    /// Loads or generates the dataset and says which rows form the test set.
    pub fn load_dataset(&self) -> CliResult<(Dataset, TestSelection)> {
        match &self.data {
            DataSource::Idx { train_images, train_labels, test, train_limit, test_limit } => {
                let train = truncate(read_idx(train_images, train_labels)?, *train_limit)?;
                match test {
                    None => Ok((train, self.fraction_selection())),
                    Some((images, labels)) => {
                        let test = truncate(read_idx(images, labels)?, *test_limit)?;
                        let idx = (train.len()..train.len() + test.len()).collect();
                        Ok((train.concat(&test)?, TestSelection::Explicit(idx)))
                    }
                }
            }
            DataSource::Clusters { spec, seed, project_dim } => {
                let mut ds = make_gaussian_clusters(*spec, *seed)?;
                if *project_dim > 0 {
                    ds = ds.project_random_linear(*project_dim, *seed)?;
                }
                Ok((ds, self.fraction_selection()))
            }
        }
    }

    fn fraction_selection(&self) -> TestSelection {
        if self.test_fraction > 0.0 {
            TestSelection::Fraction(self.test_fraction)
        } else {
            TestSelection::None
        }
    }

    /// Every key with its resolved value, in a stable order. Parsing the
    /// result yields the same configuration.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        match &self.data {
            DataSource::Idx { train_images, train_labels, test, train_limit, test_limit } => {
                kv("data.kind", "idx".into());
                kv("data.train_images", train_images.display().to_string());
                kv("data.train_labels", train_labels.display().to_string());
                if let Some((i, l)) = test {
                    kv("data.test_images", i.display().to_string());
                    kv("data.test_labels", l.display().to_string());
                }
                kv("data.train_limit", train_limit.to_string());
                kv("data.test_limit", test_limit.to_string());
            }
            DataSource::Clusters { spec, seed, project_dim } => {
                kv("data.kind", "clusters".into());
                kv("clusters.classes", spec.classes.to_string());
                kv("clusters.per_class", spec.per_class.to_string());
                kv("clusters.dim", spec.dim.to_string());
                kv("clusters.spread", spec.spread.to_string());
                kv("clusters.separation", spec.separation.to_string());
                kv("clusters.seed", seed.to_string());
                kv("clusters.project_dim", project_dim.to_string());
            }
        }
        kv("labeled_per_class", self.labeled_per_class.to_string());
        kv("test_fraction", self.test_fraction.to_string());
        kv("split_seed", self.split_seed.to_string());
        kv("hidden", join(&self.hidden));
        kv("embedding_dim", self.embedding_dim.to_string());
        kv("batch_norm", self.batch_norm.to_string());
        kv(
            "norm_order",
            match self.norm_order {
                NormOrder::BatchNormThenRelu => "bn_relu".into(),
                NormOrder::ReluThenBatchNorm => "relu_bn".into(),
            },
        );
        kv("output_batch_norm", self.output_batch_norm.to_string());
        kv("lambda_l", self.weights.labeled().to_string());
        kv("lambda_u", self.weights.unlabeled().to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("iterations_per_epoch", self.iterations_per_epoch.map_or("auto".into(), |n| n.to_string()));
        kv("base_lr", self.schedule.base_lr.to_string());
        kv("decay_factor", self.schedule.decay_factor.to_string());
        kv("decay_period", self.schedule.decay_period.to_string());
        kv("momentum", self.momentum.to_string());
        kv("seed", self.seed.to_string());
        kv("checkpoint_period", self.checkpoint_period.to_string());
        kv("bn_momentum", self.bn_momentum.to_string());
        kv("k_values", join(&self.knn.k_values));
        out
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn read_idx(images: &Path, labels: &Path) -> CliResult<Dataset> {
    for p in [images, labels] {
        if !p.is_file() {
            return Err(CliError::usage(format!("dataset file {} does not exist", p.display())));
        }
    }
    Ok(load_idx(images, labels)?)
}

fn truncate(ds: Dataset, limit: usize) -> CliResult<Dataset> {
    if limit == 0 || limit >= ds.len() {
        return Ok(ds);
    }
    let idx: Vec<usize> = (0..limit).collect();
    let labels = ds.labels()[..limit].to_vec();
    Ok(Dataset::new(ds.features().select_rows(&idx), labels, ds.class_count())?)
}
