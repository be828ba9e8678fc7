use std::sync::Arc;

use rand::seq::SliceRandom;

use super::LabeledDataset;
use crate::autodiff::Tensor;
use crate::rng::{derive_seed, rng_from_seed, Stream};

/// A minibatch as a `batch x features` tensor and its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

/// Draws minibatches from per-epoch seeded permutations.
///
/// Each epoch visits every example exactly once. A batch that runs past the
/// end of an epoch is completed from the next epoch's permutation. The
/// stream position is fully described by `(seed, epoch, cursor)`.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    dataset: Arc<LabeledDataset>,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    cursor: usize,
    order: Vec<usize>,
}

impl BatchSampler {
    /// Panics if the dataset is empty or `batch_size` is zero.
    pub fn new(dataset: Arc<LabeledDataset>, batch_size: usize, seed: u64) -> Self {
        Self::at(dataset, batch_size, seed, 0, 0)
    }

    /// A sampler positioned at `cursor` within `epoch`.
    pub fn at(dataset: Arc<LabeledDataset>, batch_size: usize, seed: u64, epoch: u64, cursor: usize) -> Self {
        assert!(!dataset.is_empty(), "cannot sample from an empty dataset");
        assert!(batch_size > 0, "batch size must be positive");
        let order = permutation(dataset.len(), seed, epoch);
        BatchSampler {
            dataset,
            batch_size,
            seed,
            epoch,
            cursor: cursor.min(order.len()),
            order,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn dataset(&self) -> &LabeledDataset {
        &self.dataset
    }

    /// Indices of the next batch, advancing the stream.
    pub fn next_indices(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch_size);
        while out.len() < self.batch_size {
            if self.cursor == self.order.len() {
                self.epoch += 1;
                self.cursor = 0;
                self.order = permutation(self.dataset.len(), self.seed, self.epoch);
            }
            let take = (self.batch_size - out.len()).min(self.order.len() - self.cursor);
            out.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
        out
    }

    pub fn next_batch(&mut self) -> Batch {
        let indices = self.next_indices();
        let width = self.dataset.feature_width();
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in &indices {
            data.extend(self.dataset.image(i).iter().map(|&p| p as f64));
        }
        Batch {
            images: Tensor::new(vec![indices.len(), width], data).expect("batch shape"),
            labels: indices.iter().map(|&i| self.dataset.labels()[i] as usize).collect(),
        }
    }
}

fn permutation(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng_from_seed(derive_seed(seed, Stream::Epoch, epoch)));
    order
}
