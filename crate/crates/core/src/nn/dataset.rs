use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use thiserror::Error;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: truncated, expected {expected} bytes but found {found}")]
    Truncated { path: PathBuf, expected: usize, found: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} at index {index} is not smaller than {classes}")]
    Label { index: usize, label: usize, classes: usize },
    #[error("dataset has {0} features, cannot crop to a square")]
    NotSquare(usize),
}

/// Samples as rows of f64 features plus class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(samples: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self, DatasetError> {
        if samples.nrows() != labels.len() {
            return Err(DatasetError::CountMismatch {
                images: samples.nrows(),
                labels: labels.len(),
            });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(DatasetError::Label {
                index,
                label,
                classes: num_classes,
            });
        }
        Ok(Self {
            samples,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    /// First `n` samples (or all of them).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            samples: self.samples.slice(ndarray::s![..n, ..]).to_owned(),
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
        }
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: self.samples.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Keeps the central `side × side` window of square images.
    pub fn center_crop(&self, side: usize) -> Result<Dataset, DatasetError> {
        let full = (self.dim() as f64).sqrt().round() as usize;
        if full * full != self.dim() || side > full {
            return Err(DatasetError::NotSquare(self.dim()));
        }
        let off = (full - side) / 2;
        let keep: Vec<usize> = (0..side)
            .flat_map(|r| (0..side).map(move |c| (r + off) * full + c + off))
            .collect();
        Ok(Dataset {
            samples: self.samples.select(Axis(1), &keep),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
        })
    }
}

fn read(path: &Path) -> Result<Vec<u8>, DatasetError> {
    fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32, DatasetError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DatasetError::Truncated {
            path: path.to_path_buf(),
            expected: at + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<(), DatasetError> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(DatasetError::BadMagic {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

fn check_len(bytes: &[u8], expected: usize, path: &Path) -> Result<(), DatasetError> {
    if bytes.len() < expected {
        return Err(DatasetError::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(())
}

/// Reads an IDX image file (`0x00000803`, `u8` pixels) and its label file
/// (`0x00000801`). Pixels are scaled by 1/255 into `[0, 1]`.
pub fn load_idx_dataset(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let images = read(images_path)?;
    check_magic(&images, IMAGES_MAGIC, images_path)?;
    let count = be_u32(&images, 4, images_path)? as usize;
    let rows = be_u32(&images, 8, images_path)? as usize;
    let cols = be_u32(&images, 12, images_path)? as usize;
    let dim = rows * cols;
    check_len(&images, 16 + count * dim, images_path)?;

    let labels = read(labels_path)?;
    check_magic(&labels, LABELS_MAGIC, labels_path)?;
    let label_count = be_u32(&labels, 4, labels_path)? as usize;
    check_len(&labels, 8 + label_count, labels_path)?;
    if label_count != count {
        return Err(DatasetError::CountMismatch {
            images: count,
            labels: label_count,
        });
    }

    let samples = Array2::from_shape_vec(
        (count, dim),
        images[16..16 + count * dim].iter().map(|&p| p as f64 / 255.0).collect(),
    )
    .expect("length checked above");
    let labels: Vec<usize> = labels[8..8 + count].iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    Dataset::new(samples, labels, num_classes)
}
