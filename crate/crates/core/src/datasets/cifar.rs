use std::path::Path;

use super::{read_file, DatasetError, LabeledDataset, NUM_CLASSES};

/// Pixels per CIFAR-10 image: 32 x 32 in three planes (R, G, B).
pub const CIFAR_FEATURES: usize = 3072;
/// Bytes per record: one label byte followed by the pixels.
pub const CIFAR_RECORD: usize = 1 + CIFAR_FEATURES;

/// Parses one CIFAR-10 binary batch.
pub fn parse_cifar10(bytes: &[u8]) -> Result<LabeledDataset, DatasetError> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(DatasetError::Format {
            offset: bytes.len() - bytes.len() % CIFAR_RECORD,
            message: format!("length {} is not a multiple of {CIFAR_RECORD}", bytes.len()),
        });
    }
    let records = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(records);
    let mut pixels = Vec::with_capacity(records * CIFAR_FEATURES);
    for (index, record) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if record[0] as usize >= NUM_CLASSES {
            return Err(DatasetError::LabelRange { index, label: record[0] });
        }
        labels.push(record[0]);
        pixels.extend_from_slice(&record[1..]);
    }
    LabeledDataset::from_bytes(&pixels, labels, CIFAR_FEATURES)
}

/// Reads the given batch files and concatenates them in order.
pub fn load_cifar10(paths: &[&Path]) -> Result<LabeledDataset, DatasetError> {
    let mut parts = Vec::with_capacity(paths.len());
    for path in paths {
        parts.push(parse_cifar10(&read_file(path)?)?);
    }
    LabeledDataset::concat(parts)
}
