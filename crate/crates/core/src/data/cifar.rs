//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! 1024 red, 1024 green and 1024 blue pixel bytes.

use std::path::Path;

use crate::data::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const RECORD_LEN: usize = 3073;
const PIXELS: usize = 3 * 32 * 32;

pub fn parse_cifar_bin(bytes: &[u8]) -> Result<Dataset> {
    let rem = bytes.len() % RECORD_LEN;
    if rem != 0 {
        return Err(Error::parse(
            bytes.len() - rem,
            format!("length {} is not a multiple of {RECORD_LEN}", bytes.len()),
        ));
    }
    let n = bytes.len() / RECORD_LEN;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * PIXELS);
    for (i, rec) in bytes.chunks_exact(RECORD_LEN).enumerate() {
        let label = usize::from(rec[0]);
        if label > 9 {
            return Err(Error::parse(i * RECORD_LEN, format!("label {label} outside 0..9")));
        }
        labels.push(label);
        data.extend(rec[1..].iter().map(|&b| f64::from(b) / 255.0));
    }
    let images = Tensor::new(vec![n, 3, 32, 32], data)?;
    Dataset::new(images, labels, 10, Provenance::Cifar10)
}

fn read_batch(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_cifar_bin(&bytes)
}

/// Training split (`data_batch_1..5.bin`) or `test_batch.bin`.
pub fn load_cifar10(dir: &Path, train: bool) -> Result<Dataset> {
    if !train {
        return read_batch(&dir.join("test_batch.bin"));
    }
    let mut all = read_batch(&dir.join("data_batch_1.bin"))?;
    for i in 2..=5 {
        all = all.concat(&read_batch(&dir.join(format!("data_batch_{i}.bin")))?)?;
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_white_record() {
        let mut rec = vec![255u8; RECORD_LEN];
        rec[0] = 7;
        let ds = parse_cifar_bin(&rec).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.labels, vec![7]);
        assert_eq!(ds.images.shape(), &[1, 3, 32, 32]);
        assert!(ds.images.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn empty_input_is_empty_dataset() {
        let ds = parse_cifar_bin(&[]).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.images.shape(), &[0, 3, 32, 32]);
    }

    #[test]
    fn partial_record_is_rejected() {
        let bytes = vec![0u8; RECORD_LEN + 10];
        assert!(matches!(
            parse_cifar_bin(&bytes),
            Err(Error::Parse { offset: RECORD_LEN, .. })
        ));
    }
}
