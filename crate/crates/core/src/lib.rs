//! Semi-supervised neighbor embedding.
//!
//! An embedding network is trained so that labeled samples cluster by class
//! and every unlabeled sample commits to exactly one cluster. Each training
//! episode draws one exemplar per class plus a labeled and an unlabeled
//! batch; a sample's squared distances to the exemplars define a softmin
//! distribution over classes. Labeled samples minimize the cross-entropy of
//! that distribution against their class, unlabeled samples minimize its
//! entropy. Classification is nearest-neighbor against the labeled set in
//! the learned space.
//!
//! ```
//! use nbe_core::data::{make_gaussian_clusters, split_semi_supervised, ClusterSpec, TestSelection};
//! use nbe_core::embednet::{mlp_specs, NormOrder};
//! use nbe_core::evaluator::{evaluate, KnnConfig};
//! use nbe_core::trainer::{train, TrainConfig};
//!
//! # fn main() -> nbe_core::Result<()> {
//! let spec = ClusterSpec { classes: 3, per_class: 40, dim: 2, spread: 0.3, separation: 4.0 };
//! let ds = make_gaussian_clusters(spec, 1)?;
//! let split = split_semi_supervised(&ds, 2, &TestSelection::Fraction(0.25), 1)?;
//! let mut cfg = TrainConfig::new(mlp_specs(2, &[16], 2, true, NormOrder::default()));
//! cfg.epochs = 2;
//! cfg.batch_size = 8;
//! let (net, _log) = train(&ds, &split, &cfg)?;
//! let report = evaluate(&net, &ds, &split, &KnnConfig::default())?;
//! assert!(report.best_error <= 1.0);
//! # Ok(())
//! # }
//! ```

pub mod checkpoint;
pub mod data;
pub mod embednet;
pub mod error;
pub mod evaluator;
pub mod matrix;
pub mod objective;
pub mod optimizer;
pub mod rng;
pub mod sampler;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use data::{Dataset, SemiSupSplit, TestSelection};
pub use embednet::{EmbeddingNet, LayerSpec, Mode};
pub use error::{Error, Result};
pub use evaluator::{EvalReport, KnnConfig};
pub use matrix::Matrix;
pub use objective::{ClassIndicator, DistanceDistribution, LossTerms, LossWeights};
pub use optimizer::{OptState, Schedule};
pub use sampler::{Episode, EpisodeSampler};
pub use trainer::{TrainConfig, TrainLog, Trainer};
