//! Episode composition: one exemplar per class, a labeled batch and an
//! unlabeled batch, all drawn uniformly with replacement.

use crate::data::LabeledView;
use crate::error::{Error, Result};
use crate::rng::{purpose, SeededStream, StreamState};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    /// `exemplar_idx[i]` is a labeled sample of class `i`.
    pub exemplar_idx: Vec<usize>,
    /// `(index, label)` pairs drawn from the labeled set.
    pub labeled_batch: Vec<(usize, usize)>,
    pub unlabeled_batch: Vec<usize>,
    pub iteration: u64,
}

impl Episode {
    /// Number of sample slots, `2b + c`.
    pub fn len(&self) -> usize {
        self.exemplar_idx.len() + self.labeled_batch.len() + self.unlabeled_batch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row order of the episode batch: exemplars, labeled, unlabeled.
    pub fn rows(&self) -> Vec<usize> {
        let mut rows = self.exemplar_idx.clone();
        rows.extend(self.labeled_batch.iter().map(|&(i, _)| i));
        rows.extend_from_slice(&self.unlabeled_batch);
        rows
    }
}

/// Saved position of the three sampling streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerState {
    pub exemplars: StreamState,
    pub labeled: StreamState,
    pub unlabeled: StreamState,
    pub iteration: u64,
}

/// Draws episodes from separate streams for exemplars, the labeled batch and
/// the unlabeled batch, so changing the batch size leaves exemplar choices
/// unchanged. Labeled samples may appear both as exemplar and in the batch.
#[derive(Debug, Clone)]
pub struct EpisodeSampler {
    by_class: Vec<Vec<usize>>,
    labeled: Vec<(usize, usize)>,
    unlabeled: Vec<usize>,
    batch_size: usize,
    exemplars: SeededStream,
    labeled_stream: SeededStream,
    unlabeled_stream: SeededStream,
    iteration: u64,
}

impl EpisodeSampler {
    pub fn new(view: &LabeledView<'_>, batch_size: usize, seed: u64) -> Result<Self> {
        let state = SamplerState {
            exemplars: SeededStream::new(seed, purpose::EXEMPLARS).state(),
            labeled: SeededStream::new(seed, purpose::LABELED_BATCH).state(),
            unlabeled: SeededStream::new(seed, purpose::UNLABELED_BATCH).state(),
            iteration: 0,
        };
        Self::restore(view, batch_size, state)
    }

    pub fn restore(view: &LabeledView<'_>, batch_size: usize, state: SamplerState) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::arg("batch size must be at least 1"));
        }
        let by_class = view.labeled_by_class();
        if let Some(k) = by_class.iter().position(Vec::is_empty) {
            return Err(Error::arg(format!("class {k} has no labeled samples")));
        }
        let split = view.split();
        if split.unlabeled_idx.is_empty() {
            return Err(Error::arg("the unlabeled set is empty"));
        }
        let labeled = split
            .labeled_idx
            .iter()
            .map(|&i| (i, view.label(i).expect("labeled index has a label")))
            .collect();
        Ok(EpisodeSampler {
            by_class,
            labeled,
            unlabeled: split.unlabeled_idx.clone(),
            batch_size,
            exemplars: SeededStream::restore(state.exemplars),
            labeled_stream: SeededStream::restore(state.labeled),
            unlabeled_stream: SeededStream::restore(state.unlabeled),
            iteration: state.iteration,
        })
    }

    pub fn state(&self) -> SamplerState {
        SamplerState {
            exemplars: self.exemplars.state(),
            labeled: self.labeled_stream.state(),
            unlabeled: self.unlabeled_stream.state(),
            iteration: self.iteration,
        }
    }

    pub fn class_count(&self) -> usize {
        self.by_class.len()
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn next_episode(&mut self) -> Episode {
        let exemplar_idx = self.by_class.iter().map(|members| members[self.exemplars.index(members.len())]).collect();
        let labeled_batch = (0..self.batch_size).map(|_| self.labeled[self.labeled_stream.index(self.labeled.len())]).collect();
        let unlabeled_batch =
            (0..self.batch_size).map(|_| self.unlabeled[self.unlabeled_stream.index(self.unlabeled.len())]).collect();
        let episode = Episode { exemplar_idx, labeled_batch, unlabeled_batch, iteration: self.iteration };
        self.iteration += 1;
        episode
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_gaussian_clusters, split_semi_supervised, ClusterSpec, TestSelection};

    fn setup(labeled_per_class: usize) -> (crate::data::Dataset, crate::data::SemiSupSplit) {
        let spec = ClusterSpec { classes: 10, per_class: 30, dim: 2, spread: 1.0, separation: 2.0 };
        let ds = make_gaussian_clusters(spec, 5).unwrap();
        let split = split_semi_supervised(&ds, labeled_per_class, &TestSelection::Fraction(0.1), 6).unwrap();
        (ds, split)
    }

    #[test]
    fn episode_has_two_b_plus_c_slots() {
        let (ds, split) = setup(3);
        let view = split.labeled_view(&ds);
        let mut sampler = EpisodeSampler::new(&view, 32, 1).unwrap();
        let ep = sampler.next_episode();
        assert_eq!(ep.len(), 74);
        for (class, &i) in ep.exemplar_idx.iter().enumerate() {
            assert_eq!(ds.label(i), class);
        }
        for &(i, l) in &ep.labeled_batch {
            assert!(split.labeled_idx.contains(&i));
            assert_eq!(ds.label(i), l);
        }
        assert!(ep.unlabeled_batch.iter().all(|i| split.unlabeled_idx.contains(i)));
    }

    #[test]
    fn single_labeled_sample_per_class_is_forced() {
        let (ds, split) = setup(1);
        let view = split.labeled_view(&ds);
        let mut sampler = EpisodeSampler::new(&view, 4, 2).unwrap();
        let mut expected = split.labeled_idx.clone();
        expected.sort_by_key(|&i| ds.label(i));
        for _ in 0..5 {
            assert_eq!(sampler.next_episode().exemplar_idx, expected);
        }
    }

    #[test]
    fn batch_size_does_not_perturb_exemplars() {
        let (ds, split) = setup(3);
        let view = split.labeled_view(&ds);
        let mut a = EpisodeSampler::new(&view, 4, 9).unwrap();
        let mut b = EpisodeSampler::new(&view, 32, 9).unwrap();
        for _ in 0..20 {
            assert_eq!(a.next_episode().exemplar_idx, b.next_episode().exemplar_idx);
        }
    }

    #[test]
    fn restored_sampler_continues_the_sequence() {
        let (ds, split) = setup(3);
        let view = split.labeled_view(&ds);
        let mut a = EpisodeSampler::new(&view, 8, 3).unwrap();
        for _ in 0..7 {
            a.next_episode();
        }
        let mut b = EpisodeSampler::restore(&view, 8, a.state()).unwrap();
        for _ in 0..10 {
            assert_eq!(a.next_episode(), b.next_episode());
        }
    }

    #[test]
    fn missing_unlabeled_set_is_rejected() {
        let spec = ClusterSpec { classes: 2, per_class: 3, dim: 2, spread: 1.0, separation: 2.0 };
        let ds = make_gaussian_clusters(spec, 5).unwrap();
        let split = split_semi_supervised(&ds, 3, &TestSelection::None, 6).unwrap();
        assert!(EpisodeSampler::new(&split.labeled_view(&ds), 4, 1).is_err());
    }
}
