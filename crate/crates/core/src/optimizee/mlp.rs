use std::sync::Arc;

use rand::Rng;
use rand_distr::Normal;

use super::{check_theta, Optimizee, OptimizeeError, StepData, TaskFamily};
use crate::autodiff::{NodeId, Tape};
use crate::datasets::{BatchSampler, LabeledDataset, Split};
use crate::rng::{derive_seed, rng_from_seed, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Relu,
}

/// Architecture of a fully connected classifier.
///
/// `theta` stores, for each layer in turn, the `in x out` weight matrix in
/// row-major order followed by the `out` bias entries.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    /// Input width, hidden widths, then the number of classes.
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub batch_size: usize,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, batch_size: usize) -> Self {
        assert!(layer_sizes.len() >= 2, "an MLP needs an input and an output layer");
        MlpSpec {
            layer_sizes,
            activation,
            batch_size,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// `(weight offset, bias offset, fan_in, fan_out)` per layer.
    pub fn layout(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let entry = (offset, offset + w[0] * w[1], w[0], w[1]);
                offset += w[0] * w[1] + w[1];
                entry
            })
            .collect()
    }

    /// Weights drawn from `Normal(0, 1/fan_in)`, biases zero.
    pub fn init_theta(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        let mut theta = vec![0.0; self.param_count()];
        for (w_off, b_off, fan_in, _) in self.layout() {
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
            for v in &mut theta[w_off..b_off] {
                *v = rng.sample(normal);
            }
        }
        theta
    }

    /// Mean softmax cross-entropy of the network on `data`.
    pub fn loss_node(&self, tape: &mut Tape, theta: NodeId, data: &StepData) -> Result<NodeId, OptimizeeError> {
        check_theta(tape, theta, self.param_count())?;
        let StepData::Batch(batch) = data else {
            return Err(OptimizeeError::MissingBatch);
        };
        let layout = self.layout();
        let mut x = tape.leaf(batch.images.clone())?;
        for (layer, &(w_off, b_off, fan_in, fan_out)) in layout.iter().enumerate() {
            let w = tape.view(theta, w_off, &[fan_in, fan_out])?;
            let b = tape.view(theta, b_off, &[fan_out])?;
            let z = tape.matmul(x, w)?;
            let z = tape.add_row_bias(z, b)?;
            x = if layer + 1 == layout.len() {
                z
            } else {
                match self.activation {
                    Activation::Sigmoid => tape.sigmoid(z)?,
                    Activation::Relu => tape.relu(z)?,
                }
            };
        }
        Ok(tape.softmax_cross_entropy(x, &batch.labels)?)
    }
}

/// An MLP classifier trained on minibatches from a seeded sampler.
pub struct MlpTask {
    pub spec: MlpSpec,
    sampler: BatchSampler,
}

impl MlpTask {
    pub fn new(spec: MlpSpec, dataset: Arc<LabeledDataset>, seed: u64) -> Self {
        assert_eq!(
            spec.layer_sizes[0],
            dataset.feature_width(),
            "input layer must match the dataset's feature width"
        );
        let sampler = BatchSampler::new(dataset, spec.batch_size, seed);
        MlpTask { spec, sampler }
    }
}

impl Optimizee for MlpTask {
    fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    fn init_theta(&self, seed: u64) -> Vec<f64> {
        self.spec.init_theta(seed)
    }

    fn next_step_data(&mut self) -> StepData {
        StepData::Batch(self.sampler.next_batch())
    }

    fn loss_node(&self, tape: &mut Tape, theta: NodeId, data: &StepData) -> Result<NodeId, OptimizeeError> {
        self.spec.loss_node(tape, theta, data)
    }
}

/// MLP classifiers on one dataset; instances differ in their batch stream.
#[derive(Clone, Debug)]
pub struct MlpFamily {
    name: String,
    pub spec: MlpSpec,
    train: Arc<LabeledDataset>,
    test: Arc<LabeledDataset>,
}

impl MlpFamily {
    pub fn new(name: &str, spec: MlpSpec, train: Arc<LabeledDataset>, test: Arc<LabeledDataset>) -> Self {
        MlpFamily {
            name: name.to_string(),
            spec,
            train,
            test,
        }
    }

    pub fn dataset(&self, split: Split) -> &Arc<LabeledDataset> {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

impl TaskFamily for MlpFamily {
    fn name(&self) -> &str {
        &self.name
    }

    fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    fn instance(&self, seed: u64, split: Split) -> Box<dyn Optimizee> {
        let data = self.dataset(split).clone();
        Box::new(MlpTask::new(self.spec.clone(), data, derive_seed(seed, Stream::Batches, 0)))
    }
}
