//! IDX image/label files (the MNIST container format).

use std::path::Path;

use crate::bench::data::{random_permutation, Split, SplitSizes, TaskDataset};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::TaskId;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// One `rows * cols` block per image, row-major.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated(format!("{what} header")))
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0, "image file")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::BadMagic(format!("image file magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let count = be_u32(bytes, 4, "image file")? as usize;
    let rows = be_u32(bytes, 8, "image file")? as usize;
    let cols = be_u32(bytes, 12, "image file")? as usize;
    let need = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Malformed("image dimensions overflow".into()))?;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::Truncated(format!("image payload has {} of {need} bytes", body.len())));
    }
    Ok(IdxImages {
        rows,
        cols,
        pixels: body[..need].to_vec(),
    })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, "label file")?;
    if magic != LABELS_MAGIC {
        return Err(Error::BadMagic(format!("label file magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let count = be_u32(bytes, 4, "label file")? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::Truncated(format!("label payload has {} of {count} bytes", body.len())));
    }
    Ok(body[..count].to_vec())
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.count() as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Images and labels read from disk, not yet split.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxData {
    pub images: IdxImages,
    pub labels: Vec<u8>,
}

impl IdxData {
    pub fn read(images_path: &Path, labels_path: &Path) -> Result<Self> {
        let images = parse_images(&std::fs::read(images_path)?)?;
        let labels = parse_labels(&std::fs::read(labels_path)?)?;
        if images.count() != labels.len() {
            return Err(Error::Malformed(format!(
                "{} images but {} labels",
                images.count(),
                labels.len()
            )));
        }
        Ok(Self { images, labels })
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m as usize + 1)
    }

    /// Consecutive train/val/test splits from the start of the file, pixels
    /// scaled to [0, 1] and optionally permuted.
    pub fn task(&self, task_id: TaskId, sizes: SplitSizes, permutation_seed: Option<u64>) -> Result<TaskDataset> {
        let total = sizes.train + sizes.val + sizes.test;
        if total > self.labels.len() {
            return Err(Error::InvalidArgument(format!(
                "splits need {total} samples, file holds {}",
                self.labels.len()
            )));
        }
        let dim = self.images.rows * self.images.cols;
        let perm = permutation_seed.map(|s| random_permutation(dim, s, 0));
        let split = |start: usize, n: usize| -> Result<Split> {
            let mut values = Vec::with_capacity(n * dim);
            for i in start..start + n {
                let img = self.images.image(i);
                match &perm {
                    Some(p) => values.extend(p.iter().map(|&j| img[j] as f64 / 255.0)),
                    None => values.extend(img.iter().map(|&v| v as f64 / 255.0)),
                }
            }
            let labels = self.labels[start..start + n].iter().map(|&y| y as usize).collect();
            Split::new(Matrix::new(n, dim, values)?, labels)
        };
        let train = split(0, sizes.train)?;
        let val = split(sizes.train, sizes.val)?;
        let test = split(sizes.train + sizes.val, sizes.test)?;
        TaskDataset::new(task_id, self.num_classes().max(1), train, val, test)
    }
}

pub fn ingest_idx(images_path: &Path, labels_path: &Path, permutation_seed: Option<u64>, sizes: SplitSizes) -> Result<TaskDataset> {
    IdxData::read(images_path, labels_path)?.task(0, sizes, permutation_seed)
}

/// Task 0 keeps the pixel order; task `t > 0` uses a permutation derived from `(seed, t)`.
pub fn permuted_sequence(data: &IdxData, n_tasks: usize, sizes: SplitSizes, seed: u64) -> Result<Vec<TaskDataset>> {
    (0..n_tasks)
        .map(|t| {
            let perm_seed = (t > 0).then(|| crate::rng::derive_seed(seed, crate::rng::stream::PERMUTATION, t as u64));
            data.task(t as TaskId, sizes, perm_seed)
        })
        .collect()
}
