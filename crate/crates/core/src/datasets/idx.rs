use std::path::Path;

use super::{maybe_gunzip, read_file, DatasetError, LabeledDataset};

/// Big-endian magic of an unsigned-byte, three-dimensional IDX file.
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// Big-endian magic of an unsigned-byte, one-dimensional IDX file.
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, DatasetError> {
    match bytes.get(offset..offset + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => Err(DatasetError::Length {
            expected: offset as u64 + 4,
            found: bytes.len() as u64,
        }),
    }
}

/// Validates the header and returns the dimensions and the payload.
fn parse_header<'a>(bytes: &'a [u8], magic: u32, what: &str) -> Result<(Vec<usize>, &'a [u8]), DatasetError> {
    let found = read_u32(bytes, 0)?;
    if found != magic {
        return Err(DatasetError::Format {
            offset: 0,
            message: format!("{what} file has magic 0x{found:08x}, expected 0x{magic:08x}"),
        });
    }
    let ndims = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndims);
    let mut count: u64 = 1;
    for d in 0..ndims {
        let v = read_u32(bytes, 4 + 4 * d)? as u64;
        count = count.checked_mul(v).ok_or_else(|| DatasetError::Format {
            offset: 4 + 4 * d,
            message: "dimension product overflows".into(),
        })?;
        dims.push(v as usize);
    }
    let header = 4 + 4 * ndims;
    let payload = &bytes[header..];
    let expected = header as u64 + count;
    if payload.len() as u64 != count {
        return Err(DatasetError::Length {
            expected,
            found: bytes.len() as u64,
        });
    }
    Ok((dims, payload))
}

/// Parses an IDX image file and its IDX label file (either may be gzipped).
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledDataset, DatasetError> {
    let images = maybe_gunzip(images)?;
    let labels = maybe_gunzip(labels)?;
    let (idims, pixels) = parse_header(&images, IDX_IMAGES_MAGIC, "image")?;
    let (ldims, label_bytes) = parse_header(&labels, IDX_LABELS_MAGIC, "label")?;
    if idims[0] != ldims[0] {
        return Err(DatasetError::Consistency(format!(
            "{} images but {} labels",
            idims[0], ldims[0]
        )));
    }
    let width = idims[1] * idims[2];
    if width == 0 {
        return Err(DatasetError::Format {
            offset: 8,
            message: format!("image size {}x{} is empty", idims[1], idims[2]),
        });
    }
    LabeledDataset::from_bytes(pixels, label_bytes.to_vec(), width)
}

/// Reads and parses an IDX image/label file pair.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset, DatasetError> {
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;
    parse_idx(&images, &labels)
}
