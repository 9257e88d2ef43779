use std::fs;
use std::path::Path;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{common_size, digit_class_names, DataError, Dataset};

/// unsigned-byte, 3 dimensions
pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
/// unsigned-byte, 1 dimension
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(DataError::Truncated {
            expected: at + 4,
            found: bytes.len(),
        })
}

fn header(bytes: &[u8], magic: u32) -> Result<(), DataError> {
    let found = be_u32(bytes, 0)?;
    if found != magic {
        return Err(DataError::BadMagic { expected: magic, found });
    }
    Ok(())
}

fn payload(bytes: &[u8], offset: usize, n: usize) -> Result<&[u8], DataError> {
    let end = offset + n;
    if bytes.len() < end {
        return Err(DataError::Truncated {
            expected: end,
            found: bytes.len(),
        });
    }
    Ok(&bytes[offset..end])
}

/// Images of an IDX3 file as `[1, rows, cols]`, byte / 255.
pub fn parse_idx_images<T: Scalar>(bytes: &[u8]) -> Result<Vec<Tensor<T>>, DataError> {
    header(bytes, IDX_IMAGE_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let px = rows * cols;
    let data = payload(bytes, 16, n * px)?;
    Ok(data
        .chunks_exact(px.max(1))
        .take(n)
        .map(|c| Tensor::from_fn(&[1, rows, cols], |i| T::of(c[i] as f64 / 255.0)))
        .collect())
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>, DataError> {
    header(bytes, IDX_LABEL_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    Ok(payload(bytes, 8, n)?.iter().map(|&b| b as usize).collect())
}

/// MNIST-style pair of IDX files; classes are the ten digit names.
pub fn load_mnist_idx<T: Scalar>(images_path: &Path, labels_path: &Path) -> Result<Dataset<T>, DataError> {
    let images = parse_idx_images(&fs::read(images_path).map_err(DataError::io(images_path))?)?;
    let labels = parse_idx_labels(&fs::read(labels_path).map_err(DataError::io(labels_path))?)?;
    let class_names = digit_class_names();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= class_names.len()) {
        return Err(DataError::InvalidLabel {
            index,
            label,
            classes: class_names.len(),
        });
    }
    let ds = Dataset {
        native_size: common_size(&images),
        images,
        labels,
        class_names,
    };
    ds.check()?;
    Ok(ds)
}

/// Inverse of [`parse_idx_images`]; pixels are rounded to bytes.
pub fn encode_idx_images<T: Scalar>(images: &[Tensor<T>]) -> Result<Vec<u8>, DataError> {
    let [_, rows, cols] = common_size(images).unwrap_or([1, 0, 0]);
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IDX_IMAGE_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        if img.shape() != [1, rows, cols] {
            return Err(DataError::Shape(img.shape().to_vec()));
        }
        out.extend(img.data().iter().map(|v| super::quantize(*v)));
    }
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&l| l as u8));
    out
}

pub fn write_mnist_idx<T: Scalar>(ds: &Dataset<T>, images_path: &Path, labels_path: &Path) -> Result<(), DataError> {
    fs::write(images_path, encode_idx_images(&ds.images)?).map_err(DataError::io(images_path))?;
    fs::write(labels_path, encode_idx_labels(&ds.labels)).map_err(DataError::io(labels_path))
}
