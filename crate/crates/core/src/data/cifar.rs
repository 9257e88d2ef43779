use std::fs;
use std::path::Path;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{DataError, Dataset};

/// One label byte, then 1024 R, 1024 G and 1024 B bytes, each plane row-major.
pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

pub fn parse_cifar10<T: Scalar>(bytes: &[u8]) -> Result<Dataset<T>, DataError> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(DataError::CifarLength(bytes.len()));
    }
    let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    let mut labels = Vec::with_capacity(images.capacity());
    for (record, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = rec[0];
        if label > 9 {
            return Err(DataError::CifarLabel { record, label });
        }
        labels.push(label as usize);
        // Record order is already channel-major, matching `[3, 32, 32]`.
        images.push(Tensor::from_fn(&[3, 32, 32], |i| T::of(rec[1 + i] as f64 / 255.0)));
    }
    Ok(Dataset {
        images,
        labels,
        class_names: CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect(),
        native_size: Some([3, 32, 32]),
    })
}

pub fn load_cifar10_bin<T: Scalar>(path: &Path) -> Result<Dataset<T>, DataError> {
    parse_cifar10(&fs::read(path).map_err(DataError::io(path))?)
}
