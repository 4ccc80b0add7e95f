//! Loaders for digit images, board images and detection proposals.

mod board;
mod detections;
mod idx;

pub use board::{
    compose_board, load_board_dir, read_png, segment_board, segment_raster, write_png, BoardCell,
    BoardImage, GridSpec, InkPolarity, EMPTY_FRACTION, EMPTY_INTENSITY,
};
pub use detections::{
    load_detections, BoundingBox, ComponentName, Detection, DetectionFile, ImageSize,
};
pub use idx::{
    load_idx, parse_idx_images, parse_idx_labels, write_idx, IMAGES_MAGIC, LABELS_MAGIC,
};

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Labelled images of one common size (28×28 for MNIST).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    images: Vec<Raster>,
    labels: Vec<u8>,
    source: String,
}

impl LabeledImageSet {
    pub fn new(images: Vec<Raster>, labels: Vec<u8>, source: impl Into<String>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 9) {
            return Err(Error::Input(format!("label {l} is not a digit")));
        }
        let size = images.first().map(|i| (i.width(), i.height()));
        for (i, img) in images.iter().enumerate() {
            if Some((img.width(), img.height())) != size {
                let (w, h) = size.unwrap_or_default();
                return Err(Error::Input(format!(
                    "image {i} is {}×{}, expected {w}×{h}",
                    img.width(),
                    img.height()
                )));
            }
            if img.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Input(format!("image {i} has pixels outside [0, 1]")));
            }
        }
        Ok(Self {
            images,
            labels,
            source: source.into(),
        })
    }

    pub fn images(&self) -> &[Raster] {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// The first `n` items (or all of them).
    pub fn head(&self, n: usize) -> LabeledImageSet {
        let n = n.min(self.len());
        LabeledImageSet {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            source: format!("{}[..{n}]", self.source),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Raster, u8)> {
        self.images.iter().zip(self.labels.iter().copied())
    }
}

/// Locations of the four standard MNIST files inside one directory.
#[derive(Debug, Clone)]
pub struct MnistPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistPaths {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            train_images: dir.join("train-images-idx3-ubyte"),
            train_labels: dir.join("train-labels-idx1-ubyte"),
            test_images: dir.join("t10k-images-idx3-ubyte"),
            test_labels: dir.join("t10k-labels-idx1-ubyte"),
        }
    }

    pub fn exists(&self) -> bool {
        [
            &self.train_images,
            &self.train_labels,
            &self.test_images,
            &self.test_labels,
        ]
        .iter()
        .all(|p| p.is_file())
    }

    pub fn load_train(&self) -> Result<LabeledImageSet> {
        load_idx(&self.train_images, &self.train_labels)
    }

    pub fn load_test(&self) -> Result<LabeledImageSet> {
        load_idx(&self.test_images, &self.test_labels)
    }
}
