use std::fs;
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        file: path.to_path_buf(),
        source,
    })
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        file: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, "truncated header"))
}

/// Loads up to `limit` samples from an IDX image/label file pair.
///
/// Pixels are scaled to `[0, 1]` and images are flattened row-major. The
/// class count is one more than the largest label in the whole labels file.
pub fn load_idx(images_path: &Path, labels_path: &Path, limit: usize) -> Result<LabeledDataset> {
    let images = read(images_path)?;
    let labels = read(labels_path)?;

    let magic = be_u32(&images, 0, images_path)?;
    if magic != IMAGES_MAGIC {
        return Err(format_err(
            images_path,
            format!("bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        ));
    }
    let image_count = be_u32(&images, 4, images_path)? as usize;
    let rows = be_u32(&images, 8, images_path)? as usize;
    let cols = be_u32(&images, 12, images_path)? as usize;

    let magic = be_u32(&labels, 0, labels_path)?;
    if magic != LABELS_MAGIC {
        return Err(format_err(
            labels_path,
            format!("bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        ));
    }
    let label_count = be_u32(&labels, 4, labels_path)? as usize;

    if image_count != label_count {
        return Err(format_err(
            labels_path,
            format!("{label_count} labels for {image_count} images"),
        ));
    }
    let dim = rows * cols;
    if dim == 0 {
        return Err(format_err(images_path, "zero-sized images"));
    }
    let pixels = &images[16..];
    if pixels.len() < image_count * dim {
        return Err(format_err(
            images_path,
            format!(
                "truncated: {} pixel bytes for {image_count} images of {rows}x{cols}",
                pixels.len()
            ),
        ));
    }
    let label_bytes = &labels[8..];
    if label_bytes.len() < label_count {
        return Err(format_err(
            labels_path,
            format!(
                "truncated: {} label bytes for {label_count}",
                label_bytes.len()
            ),
        ));
    }
    let label_bytes = &label_bytes[..label_count];

    let n = limit.min(image_count);
    let num_classes = label_bytes
        .iter()
        .copied()
        .max()
        .map_or(1, |m| m as usize + 1);
    let features = pixels[..n * dim]
        .iter()
        .map(|&p| f64::from(p) / 255.0)
        .collect();
    let labels = label_bytes[..n].iter().map(|&l| l as usize).collect();
    LabeledDataset::new(dim, num_classes, features, labels)
}
