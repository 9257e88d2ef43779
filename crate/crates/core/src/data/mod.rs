//! Dataset ingestion (IDX, CIFAR-10 binary, image folders) and image
//! output. Loaded pixels are always in `[0, 1]`, laid out `[C, H, W]`.

mod cifar;
mod digits;
mod idx;
mod image_dir;
mod imageio;

use std::path::PathBuf;

pub use cifar::{load_cifar10_bin, parse_cifar10, CIFAR10_CLASSES, CIFAR_RECORD};
pub use digits::{render_digit, synthetic_digits};
pub use idx::{
    encode_idx_images, encode_idx_labels, load_mnist_idx, parse_idx_images, parse_idx_labels, write_mnist_idx,
    IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC,
};
pub use image_dir::load_image_dir;
pub use imageio::{
    decode_pgm, encode_pgm, quantize, read_image, read_pgm, resize_bilinear, to_grayscale, write_image, write_pgm,
    write_png,
};

use crate::model::DIGIT_NAMES;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated payload: header promises {expected} bytes, file has {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} of item {index} is out of range for {classes} classes")]
    InvalidLabel { index: usize, label: usize, classes: usize },
    #[error("CIFAR-10 file length {0} is not a positive multiple of {CIFAR_RECORD}")]
    CifarLength(usize),
    #[error("CIFAR-10 record {record} has label byte {label}, expected 0..=9")]
    CifarLabel { record: usize, label: u8 },
    #[error("class directory {0} holds no readable images")]
    EmptyClassDir(PathBuf),
    #[error("{0} holds no class directories")]
    NoClasses(PathBuf),
    #[error("malformed PGM: {0}")]
    Pgm(String),
    #[error("expected a [channels, height, width] image with 1 or 3 channels, got {0:?}")]
    Shape(Vec<usize>),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| DataError::Io { path, source }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub images: Vec<Tensor<T>>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    /// `[C, H, W]` of the stored images; `None` when sizes differ.
    pub native_size: Option<[usize; 3]>,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Every image resized to `h x w` and converted to `channels` (1 or 3).
    pub fn prepared(&self, channels: usize, h: usize, w: usize) -> Result<Self, DataError> {
        let images = self
            .images
            .iter()
            .map(|img| {
                let img = match (img.shape()[0], channels) {
                    (3, 1) => to_grayscale(img)?,
                    (1, 3) => Tensor::from_fn(&[3, img.shape()[1], img.shape()[2]], |i| img.data()[i % img.len()]),
                    (c, k) if c == k => img.clone(),
                    _ => return Err(DataError::Shape(img.shape().to_vec())),
                };
                resize_bilinear(&img, h, w)
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            images,
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
            native_size: Some([channels, h, w]),
        })
    }

    pub(crate) fn check(&self) -> Result<(), DataError> {
        if self.images.len() != self.labels.len() {
            return Err(DataError::CountMismatch {
                images: self.images.len(),
                labels: self.labels.len(),
            });
        }
        Ok(())
    }
}

pub(crate) fn digit_class_names() -> Vec<String> {
    DIGIT_NAMES.iter().map(|s| s.to_string()).collect()
}

pub(crate) fn common_size<T: Scalar>(images: &[Tensor<T>]) -> Option<[usize; 3]> {
    let first = images.first()?.shape().to_vec();
    images
        .iter()
        .all(|i| i.shape() == first.as_slice())
        .then(|| [first[0], first[1], first[2]])
}
