use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::lstm::{LstmCellWeights, LstmOptimizerParams, ARRAY_NAMES};
use super::CheckpointError;
use crate::autodiff::Tensor;

const FORMAT_VERSION: u32 = 1;

/// Learned optimizer parameters together with the DMD configuration they
/// were trained with and, when produced by meta-training, their score.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: LstmOptimizerParams,
    pub snapshots: usize,
    /// Evaluation meta-loss, lower is better.
    pub score: Option<f64>,
    pub epoch: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct ArrayDoc {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    version: u32,
    rank: usize,
    snapshots: usize,
    hidden_size: usize,
    output_scale: f64,
    preprocess_p: f64,
    arrays: BTreeMap<String, ArrayDoc>,
    #[serde(default)]
    score: Option<f64>,
    #[serde(default)]
    epoch: Option<usize>,
}

impl Checkpoint {
    pub fn new(params: LstmOptimizerParams, snapshots: usize) -> Self {
        Checkpoint {
            params,
            snapshots,
            score: None,
            epoch: None,
        }
    }

    /// Serializes to JSON. Floats are written in shortest round-trip form,
    /// so reading the document back reproduces every value exactly.
    pub fn to_json(&self) -> String {
        let arrays = self
            .params
            .named_arrays()
            .into_iter()
            .map(|(name, t)| {
                (
                    name.to_string(),
                    ArrayDoc {
                        shape: t.shape().to_vec(),
                        data: t.data().to_vec(),
                    },
                )
            })
            .collect();
        let doc = CheckpointDoc {
            version: FORMAT_VERSION,
            rank: self.params.rank,
            snapshots: self.snapshots,
            hidden_size: self.params.hidden(),
            output_scale: self.params.output_scale,
            preprocess_p: self.params.preprocess_p,
            arrays,
            score: self.score,
            epoch: self.epoch,
        };
        serde_json::to_string_pretty(&doc).expect("checkpoint serialization")
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let mut doc: CheckpointDoc = serde_json::from_str(text).map_err(|e| CheckpointError::Parse(e.to_string()))?;
        if doc.version != FORMAT_VERSION {
            return Err(CheckpointError::Invalid(format!("unsupported version {}", doc.version)));
        }
        let h = doc.hidden_size;
        let input = LstmOptimizerParams::input_width(doc.rank);
        let expected: [Vec<usize>; 6] = [
            vec![input + h, 4 * h],
            vec![4 * h],
            vec![2 * h, 4 * h],
            vec![4 * h],
            vec![h, 1],
            vec![1],
        ];
        let mut tensors = Vec::with_capacity(6);
        for (name, shape) in ARRAY_NAMES.iter().zip(expected) {
            let array = doc
                .arrays
                .remove(*name)
                .ok_or_else(|| CheckpointError::Invalid(format!("missing array {name}")))?;
            if array.shape != shape {
                return Err(CheckpointError::Invalid(format!(
                    "array {name} has shape {:?}, expected {shape:?}",
                    array.shape
                )));
            }
            let t = Tensor::new(array.shape, array.data)
                .map_err(|e| CheckpointError::Invalid(format!("array {name}: {e}")))?;
            if !t.is_finite() {
                return Err(CheckpointError::Invalid(format!("array {name} is not finite")));
            }
            tensors.push(t);
        }
        if let Some(extra) = doc.arrays.keys().next() {
            return Err(CheckpointError::Invalid(format!("unexpected array {extra}")));
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("six arrays");
        let params = LstmOptimizerParams {
            rank: doc.rank,
            layer1: LstmCellWeights {
                weight: next(),
                bias: next(),
            },
            layer2: LstmCellWeights {
                weight: next(),
                bias: next(),
            },
            head_weight: next(),
            head_bias: next(),
            output_scale: doc.output_scale,
            preprocess_p: doc.preprocess_p,
        };
        if doc.rank > 0 && doc.snapshots < doc.rank {
            return Err(CheckpointError::Invalid(format!(
                "rank {} exceeds snapshot count {}",
                doc.rank, doc.snapshots
            )));
        }
        Ok(Checkpoint {
            params,
            snapshots: doc.snapshots,
            score: doc.score,
            epoch: doc.epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_json()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}
