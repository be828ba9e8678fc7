//! Image classification datasets: IDX (MNIST, FashionMNIST) and CIFAR-10
//! binary readers plus a seeded minibatch sampler.
//!
//! Parsing is total. Any byte stream yields either a complete
//! [`LabeledDataset`] or a typed [`DatasetError`]; sizes are validated
//! before anything is allocated.

mod cifar;
mod idx;
mod sampler;

pub use cifar::{load_cifar10, parse_cifar10, CIFAR_FEATURES, CIFAR_RECORD};
pub use idx::{load_idx, parse_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use sampler::{Batch, BatchSampler};

use std::io::Read;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Number of classes in every supported dataset.
pub const NUM_CLASSES: usize = 10;

// Upper bound on the decompressed size of a gzip input.
const MAX_DECOMPRESSED: u64 = 1 << 31;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("length error: expected {expected} bytes, found {found}")]
    Length { expected: u64, found: u64 },
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("label {label} at example {index} is outside 0..{NUM_CLASSES}")]
    LabelRange { index: usize, label: u8 },
    #[error("gzip stream could not be decoded: {0}")]
    Gzip(String),
}

/// Which published split of a dataset to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Flattened images with pixel values in `[0, 1]` and labels in `0..10`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    images: Vec<f32>,
    labels: Vec<u8>,
    feature_width: usize,
}

impl LabeledDataset {
    /// Builds a dataset from raw bytes, scaling pixels by `1/255`.
    pub fn from_bytes(pixels: &[u8], labels: Vec<u8>, feature_width: usize) -> Result<Self, DatasetError> {
        if feature_width == 0 {
            return Err(DatasetError::Consistency("feature width is zero".into()));
        }
        if pixels.len() != labels.len() * feature_width {
            return Err(DatasetError::Consistency(format!(
                "{} pixels do not form {} rows of width {feature_width}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= NUM_CLASSES) {
            return Err(DatasetError::LabelRange { index, label });
        }
        Ok(LabeledDataset {
            images: pixels.iter().map(|&b| b as f32 / 255.0).collect(),
            labels,
            feature_width,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    pub fn images(&self) -> &[f32] {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image(&self, index: usize) -> &[f32] {
        &self.images[index * self.feature_width..(index + 1) * self.feature_width]
    }

    /// The first `limit` examples (all of them if `limit` is larger).
    pub fn truncated(mut self, limit: usize) -> Self {
        if limit < self.len() {
            self.labels.truncate(limit);
            self.images.truncate(limit * self.feature_width);
        }
        self
    }

    /// Concatenates datasets of equal feature width.
    pub fn concat(parts: Vec<LabeledDataset>) -> Result<Self, DatasetError> {
        let mut iter = parts.into_iter();
        let Some(mut first) = iter.next() else {
            return Err(DatasetError::Consistency("no dataset parts given".into()));
        };
        for part in iter {
            if part.feature_width != first.feature_width {
                return Err(DatasetError::Consistency(format!(
                    "feature widths {} and {} differ",
                    first.feature_width, part.feature_width
                )));
            }
            first.images.extend(part.images);
            first.labels.extend(part.labels);
        }
        Ok(first)
    }
}

/// Returns the payload, transparently decompressing gzip input.
pub(crate) fn maybe_gunzip(bytes: &[u8]) -> Result<std::borrow::Cow<'_, [u8]>, DatasetError> {
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(bytes)
            .take(MAX_DECOMPRESSED)
            .read_to_end(&mut out)
            .map_err(|e| DatasetError::Gzip(e.to_string()))?;
        Ok(std::borrow::Cow::Owned(out))
    } else {
        Ok(std::borrow::Cow::Borrowed(bytes))
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, DatasetError> {
    std::fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}
