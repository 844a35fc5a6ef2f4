//! IDX files as distributed for (Fashion-)MNIST: big-endian `u32` magic,
//! big-endian `u32` dimension sizes, then unsigned-byte payload.

use std::path::Path;

use crate::data::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub enum IdxPart {
    /// `N × 1 × rows × cols`, pixels scaled to `[0, 1]`.
    Images(Tensor),
    Labels(Vec<usize>),
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::parse(bytes.len(), "truncated IDX header"))
}

/// Checks the payload length against `count` records of `record` bytes,
/// reporting the offset of the first incomplete record on failure.
fn check_payload(bytes: &[u8], header: usize, count: usize, record: usize) -> Result<()> {
    let payload = bytes.len() - header;
    let need = count * record;
    if payload < need {
        let complete = if record == 0 { 0 } else { payload / record };
        return Err(Error::parse(
            header + complete * record,
            format!("header declares {count} records but only {complete} are complete"),
        ));
    }
    if payload > need {
        return Err(Error::parse(header + need, "trailing bytes after the last record"));
    }
    Ok(())
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxPart> {
    match read_u32(bytes, 0)? {
        IMAGES_MAGIC => {
            let n = read_u32(bytes, 4)? as usize;
            let rows = read_u32(bytes, 8)? as usize;
            let cols = read_u32(bytes, 12)? as usize;
            check_payload(bytes, 16, n, rows * cols)?;
            let data = bytes[16..].iter().map(|&b| f64::from(b) / 255.0).collect();
            Ok(IdxPart::Images(Tensor::new(vec![n, 1, rows, cols], data)?))
        }
        LABELS_MAGIC => {
            let n = read_u32(bytes, 4)? as usize;
            check_payload(bytes, 8, n, 1)?;
            let labels: Vec<usize> = bytes[8..].iter().map(|&b| usize::from(b)).collect();
            if let Some(pos) = labels.iter().position(|&y| y > 9) {
                return Err(Error::parse(8 + pos, format!("label {} outside 0..9", labels[pos])));
            }
            Ok(IdxPart::Labels(labels))
        }
        other => Err(Error::parse(0, format!("unknown IDX magic 0x{other:08x}"))),
    }
}

/// Inverse of [`parse_idx`] for images; pixels are quantized to bytes.
pub fn encode_idx_images(images: &Tensor) -> Result<Vec<u8>> {
    let shape = images.shape();
    let (n, rows, cols) = match *shape {
        [n, 1, r, c] | [n, r, c] => (n, r, c),
        _ => return Err(Error::config(format!("cannot encode shape {shape:?} as IDX images"))),
    };
    let mut out = Vec::with_capacity(16 + images.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(images.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&y| y as u8));
    out
}

/// Joins an image file and a label file into a dataset.
pub fn dataset_from_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let images = match parse_idx(images)? {
        IdxPart::Images(t) => t,
        IdxPart::Labels(_) => return Err(Error::parse(0, "expected an image file, found labels")),
    };
    let labels = match parse_idx(labels)? {
        IdxPart::Labels(l) => l,
        IdxPart::Images(_) => return Err(Error::parse(0, "expected a label file, found images")),
    };
    Dataset::new(images, labels, 10, Provenance::FashionMnist)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Loads the standard file names from a directory; `train` picks the
/// training split, otherwise the `t10k` test split.
pub fn load_fashion_mnist(dir: &Path, train: bool) -> Result<Dataset> {
    let prefix = if train { "train" } else { "t10k" };
    let images = read(&dir.join(format!("{prefix}-images-idx3-ubyte")))?;
    let labels = read(&dir.join(format!("{prefix}-labels-idx1-ubyte")))?;
    dataset_from_idx(&images, &labels)
}
