//! The training loop: sample an episode, embed all of its `2b + c` rows in a
//! single train-mode batch, evaluate the weighted objective against the
//! episode's exemplars, back-propagate, and take a Nesterov step.

use std::fmt::Write as _;
use std::time::Instant;

use crate::checkpoint::Checkpoint;
use crate::data::{Dataset, SemiSupSplit};
use crate::embednet::{validate_specs, EmbeddingNet, LayerSpec, Mode, BN_MOMENTUM};
use crate::error::{Error, Result};
use crate::objective::{episode_loss, ClassIndicator, EpisodeLayout, LossWeights};
use crate::optimizer::{self, OptState, Schedule};
use crate::sampler::EpisodeSampler;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub batch_size: usize,
    pub epochs: u64,
    /// `None` means one pass over the unlabeled set: `⌈|X_U| / b⌉`.
    pub iterations_per_epoch: Option<u64>,
    pub schedule: Schedule,
    pub momentum: f64,
    pub seed: u64,
    pub specs: Vec<LayerSpec>,
    /// Emit a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_period: u64,
    pub bn_momentum: f64,
}

impl TrainConfig {
    pub fn new(specs: Vec<LayerSpec>) -> Self {
        TrainConfig {
            weights: LossWeights::default(),
            batch_size: 32,
            epochs: 90,
            iterations_per_epoch: None,
            schedule: Schedule::default(),
            momentum: 0.9,
            seed: 0,
            specs,
            checkpoint_period: 0,
            bn_momentum: BN_MOMENTUM,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        validate_specs(&self.specs).map_or(0, |(_, out)| out)
    }

    pub fn validate(&self) -> Result<()> {
        LossWeights::new(self.weights.labeled(), self.weights.unlabeled())?;
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::arg("epochs must be at least 1"));
        }
        if self.iterations_per_epoch == Some(0) {
            return Err(Error::arg("iterations_per_epoch must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::arg(format!("bn_momentum must lie in [0, 1], got {}", self.bn_momentum)));
        }
        self.schedule.validate()?;
        validate_specs(&self.specs)?;
        Ok(())
    }

    pub fn resolved_iterations_per_epoch(&self, split: &SemiSupSplit) -> u64 {
        self.iterations_per_epoch
            .unwrap_or_else(|| (split.unlabeled_idx.len() as u64).div_ceil(self.batch_size as u64).max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iter: u64,
    pub epoch: u64,
    pub lr: f64,
    pub loss_labeled: f64,
    pub loss_unlabeled: f64,
    pub loss_total: f64,
    /// Mean entropy of the unlabeled batch's distance distributions.
    pub entropy_unlabeled_mean: f64,
    /// Number of rows in the episode batch.
    pub episode_size: usize,
}

pub const LOG_HEADER: &str = "iter,epoch,lr,loss_L,loss_U,loss_total,entropy_U_mean";

impl IterRecord {
    /// One comma-separated line; floats use the shortest round-trip form.
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iter, self.epoch, self.lr, self.loss_labeled, self.loss_unlabeled, self.loss_total, self.entropy_unlabeled_mean
        )
    }
}

/// Per-iteration records plus wall-clock seconds since the run (or resume)
/// started. The clock is kept apart from the records so logs of identical
/// runs compare equal.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<IterRecord>,
    pub wall_clock: Vec<f64>,
}

impl TrainLog {
    pub fn to_lines(&self) -> String {
        let mut out = String::from(LOG_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(out, "{}", r.to_line());
        }
        out
    }

    fn epoch_means(&self, f: impl Fn(&IterRecord) -> f64) -> Vec<(u64, f64)> {
        let mut out: Vec<(u64, f64, usize)> = Vec::new();
        for r in &self.records {
            match out.last_mut() {
                Some((e, sum, n)) if *e == r.epoch => {
                    *sum += f(r);
                    *n += 1;
                }
                _ => out.push((r.epoch, f(r), 1)),
            }
        }
        out.into_iter().map(|(e, s, n)| (e, s / n as f64)).collect()
    }

    /// Mean unlabeled entropy per epoch.
    pub fn epoch_entropy_means(&self) -> Vec<(u64, f64)> {
        self.epoch_means(|r| r.entropy_unlabeled_mean)
    }

    pub fn epoch_loss_means(&self) -> Vec<(u64, f64)> {
        self.epoch_means(|r| r.loss_total)
    }

    /// Learning rate of each epoch, in order of appearance.
    pub fn epoch_learning_rates(&self) -> Vec<(u64, f64)> {
        let mut out: Vec<(u64, f64)> = Vec::new();
        for r in &self.records {
            if out.last().map(|&(e, _)| e) != Some(r.epoch) {
                out.push((r.epoch, r.lr));
            }
        }
        out
    }
}

/// Stateful training run. Owns the network, optimizer and sampler state;
/// everything needed to continue is captured by [`Trainer::checkpoint`].
pub struct Trainer<'a> {
    ds: &'a Dataset,
    split: &'a SemiSupSplit,
    cfg: TrainConfig,
    net: EmbeddingNet,
    opt: OptState,
    sampler: EpisodeSampler,
    iteration: u64,
    iterations_per_epoch: u64,
    log: TrainLog,
    started: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(ds: &'a Dataset, split: &'a SemiSupSplit, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        check_compat(ds, split, &cfg)?;
        let net = EmbeddingNet::init(&cfg.specs, cfg.seed)?;
        let opt = OptState::new(&net, cfg.momentum, cfg.schedule)?;
        let sampler = EpisodeSampler::new(&split.labeled_view(ds), cfg.batch_size, cfg.seed)?;
        let iterations_per_epoch = cfg.resolved_iterations_per_epoch(split);
        Ok(Trainer { ds, split, cfg, net, opt, sampler, iteration: 0, iterations_per_epoch, log: TrainLog::default(), started: Instant::now() })
    }

    /// Continues from a checkpoint. The network specs, batch size and epoch
    /// length must match the configuration.
    pub fn resume(checkpoint: Checkpoint, ds: &'a Dataset, split: &'a SemiSupSplit, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        check_compat(ds, split, &cfg)?;
        if checkpoint.net.specs() != cfg.specs.as_slice() {
            return Err(Error::consistency("checkpoint network specs differ from the configuration"));
        }
        let iterations_per_epoch = cfg.resolved_iterations_per_epoch(split);
        if checkpoint.iterations_per_epoch != iterations_per_epoch {
            return Err(Error::consistency(format!(
                "checkpoint was trained with {} iterations per epoch, configuration gives {iterations_per_epoch}",
                checkpoint.iterations_per_epoch
            )));
        }
        if checkpoint.batch_size != cfg.batch_size {
            return Err(Error::consistency(format!(
                "checkpoint batch size {} differs from configured {}",
                checkpoint.batch_size, cfg.batch_size
            )));
        }
        let sampler = EpisodeSampler::restore(&split.labeled_view(ds), cfg.batch_size, checkpoint.sampler)?;
        Ok(Trainer {
            ds,
            split,
            cfg,
            net: checkpoint.net,
            opt: checkpoint.opt,
            sampler,
            iteration: checkpoint.iteration,
            iterations_per_epoch,
            log: TrainLog::default(),
            started: Instant::now(),
        })
    }

    pub fn net(&self) -> &EmbeddingNet {
        &self.net
    }

    pub fn split(&self) -> &SemiSupSplit {
        self.split
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn iterations_per_epoch(&self) -> u64 {
        self.iterations_per_epoch
    }

    /// Number of fully completed epochs.
    pub fn epoch(&self) -> u64 {
        self.iteration / self.iterations_per_epoch
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            net: self.net.clone(),
            opt: self.opt.clone(),
            sampler: self.sampler.state(),
            iteration: self.iteration,
            iterations_per_epoch: self.iterations_per_epoch,
            batch_size: self.cfg.batch_size,
        }
    }

    /// Runs one iteration. On error the trainer is left exactly as it was
    /// before the call, apart from the consumed episode draw.
    pub fn step(&mut self) -> Result<IterRecord> {
        let epoch = self.epoch();
        self.opt.epoch = epoch;
        let lr = self.opt.current_lr();
        let episode = self.sampler.next_episode();
        let iteration = self.iteration;
        let abort = |e: Error| match e {
            Error::Numeric(detail) => Error::NonFiniteLoss { iteration, detail },
            other => other,
        };

        let batch = self.ds.features().select_rows(&episode.rows());
        let (embeddings, trace) = self.net.forward(&batch, Mode::Train).map_err(abort)?;
        let classes = self.ds.class_count();
        let layout = EpisodeLayout { classes, labeled: episode.labeled_batch.len(), unlabeled: episode.unlabeled_batch.len() };
        let targets = episode
            .labeled_batch
            .iter()
            .map(|&(_, label)| ClassIndicator::one_hot(label, classes))
            .collect::<Result<Vec<_>>>()?;
        let loss = episode_loss(&embeddings, layout, &targets, self.cfg.weights).map_err(abort)?;
        if !loss.combined.is_finite() {
            return Err(Error::NonFiniteLoss { iteration, detail: format!("combined loss is {}", loss.combined) });
        }
        let (grads, _) = self.net.backward(&trace, &loss.grad)?;

        let mut next = self.net.clone();
        let mut next_opt = self.opt.clone();
        optimizer::step(&mut next, &grads, &mut next_opt).map_err(abort)?;
        next.absorb_batch_stats(&trace, self.cfg.bn_momentum)?;
        self.net = next;
        self.opt = next_opt;
        self.iteration += 1;

        let record = IterRecord {
            iter: iteration,
            epoch,
            lr,
            loss_labeled: loss.labeled_mean,
            loss_unlabeled: loss.unlabeled_mean,
            loss_total: loss.combined,
            entropy_unlabeled_mean: loss.unlabeled_mean,
            episode_size: episode.len(),
        };
        self.log.records.push(record);
        self.log.wall_clock.push(self.started.elapsed().as_secs_f64());
        Ok(record)
    }

    /// Trains until `epoch_limit` epochs are complete (capped at the
    /// configured total), handing a checkpoint to `sink` every
    /// `checkpoint_period` epochs and when the configured total is reached.
    pub fn run_until(&mut self, epoch_limit: u64, sink: &mut dyn FnMut(&Checkpoint) -> Result<()>) -> Result<()> {
        let limit = epoch_limit.min(self.cfg.epochs);
        let end = limit * self.iterations_per_epoch;
        while self.iteration < end {
            self.step()?;
            if self.iteration % self.iterations_per_epoch == 0 {
                let epoch = self.epoch();
                let periodic = self.cfg.checkpoint_period > 0 && epoch % self.cfg.checkpoint_period == 0;
                if periodic || epoch == self.cfg.epochs {
                    sink(&self.checkpoint())?;
                }
            }
        }
        self.opt.epoch = self.epoch();
        Ok(())
    }

    pub fn run(&mut self, sink: &mut dyn FnMut(&Checkpoint) -> Result<()>) -> Result<()> {
        self.run_until(self.cfg.epochs, sink)
    }

    pub fn into_parts(self) -> (EmbeddingNet, TrainLog) {
        (self.net, self.log)
    }
}

fn check_compat(ds: &Dataset, split: &SemiSupSplit, cfg: &TrainConfig) -> Result<()> {
    split.validate(ds)?;
    let (input_dim, _) = validate_specs(&cfg.specs)?;
    if input_dim != ds.dim() {
        return Err(Error::consistency(format!("network expects {input_dim} inputs, dataset has {}", ds.dim())));
    }
    Ok(())
}

/// Trains from scratch for the configured number of epochs.
pub fn train(ds: &Dataset, split: &SemiSupSplit, cfg: &TrainConfig) -> Result<(EmbeddingNet, TrainLog)> {
    let mut trainer = Trainer::new(ds, split, cfg.clone())?;
    trainer.run(&mut |_| Ok(()))?;
    Ok(trainer.into_parts())
}

/// Continues a checkpointed run to the configured number of epochs.
pub fn resume(checkpoint: Checkpoint, ds: &Dataset, split: &SemiSupSplit, cfg: &TrainConfig) -> Result<(EmbeddingNet, TrainLog)> {
    let mut trainer = Trainer::resume(checkpoint, ds, split, cfg.clone())?;
    trainer.run(&mut |_| Ok(()))?;
    Ok(trainer.into_parts())
}
