//! IDX reader/writer (big-endian headers, as published for MNIST).

use std::fs;
use std::path::Path;

use super::LabeledImageSet;
use crate::error::{Error, Result};
use crate::raster::{Raster, DIGIT_SIDE};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledImageSet> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let image_bytes = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let label_bytes = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let images = parse_idx_images(&image_bytes, images_path)?;
    let labels = parse_idx_labels(&label_bytes, labels_path)?;
    if images.len() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} holds {} images but {} holds {} labels",
            images_path.display(),
            images.len(),
            labels_path.display(),
            labels.len()
        )));
    }
    LabeledImageSet::new(images, labels, images_path.display().to_string())
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| format_error(path, bytes.len(), "file ends inside the header"))
}

fn format_error(path: &Path, offset: usize, message: &str) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset,
        message: message.to_string(),
    }
}

pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Vec<Raster>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(format_error(
            path,
            0,
            &format!("magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        ));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    if rows != DIGIT_SIDE || cols != DIGIT_SIDE {
        return Err(format_error(
            path,
            8,
            &format!("images are {rows}×{cols}, expected 28×28"),
        ));
    }
    let size = rows * cols;
    let expected = 16 + count * size;
    if bytes.len() < expected {
        return Err(format_error(
            path,
            bytes.len(),
            &format!("truncated: header declares {count} images ({expected} bytes)"),
        ));
    }
    if bytes.len() > expected {
        return Err(format_error(path, expected, "trailing bytes after image data"));
    }
    Ok(bytes[16..]
        .chunks_exact(size)
        .map(|px| Raster::from_bytes(cols, rows, px))
        .collect())
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(format_error(
            path,
            0,
            &format!("magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        ));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(format_error(
            path,
            bytes.len(),
            &format!("truncated: header declares {count} labels ({expected} bytes)"),
        ));
    }
    if bytes.len() > expected {
        return Err(format_error(path, expected, "trailing bytes after label data"));
    }
    let labels = bytes[8..].to_vec();
    if let Some(pos) = labels.iter().position(|&l| l > 9) {
        return Err(format_error(
            path,
            8 + pos,
            &format!("label {} is not a digit", labels[pos]),
        ));
    }
    Ok(labels)
}

pub fn write_idx(
    set: &LabeledImageSet,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let mut img = Vec::with_capacity(16 + set.len() * DIGIT_SIDE * DIGIT_SIDE);
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(set.len() as u32).to_be_bytes());
    img.extend_from_slice(&(DIGIT_SIDE as u32).to_be_bytes());
    img.extend_from_slice(&(DIGIT_SIDE as u32).to_be_bytes());
    for image in set.images() {
        img.extend_from_slice(&image.to_bytes());
    }
    let mut lab = Vec::with_capacity(8 + set.len());
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(set.len() as u32).to_be_bytes());
    lab.extend_from_slice(set.labels());
    fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))
}
