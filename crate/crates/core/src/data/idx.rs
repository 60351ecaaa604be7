//! IDX (big-endian) image and label file parsing.

use super::{Dataset, NormStats};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::path::Path;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], off: usize, what: &str) -> Result<u32> {
    bytes
        .get(off..off + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(format!("truncated {what}")))
}

/// Parse an IDX image/label pair into a normalized dataset. No partial
/// dataset is produced on malformed input.
pub fn load_idx<S: Scalar>(
    images_path: &Path,
    labels_path: &Path,
    stats: &NormStats,
    num_classes: usize,
    name: &str,
) -> Result<Dataset<S>> {
    let img_bytes = std::fs::read(images_path)?;
    let lbl_bytes = std::fs::read(labels_path)?;

    let img_magic = read_be_u32(&img_bytes, 0, "image header")?;
    if img_magic != IDX_IMAGE_MAGIC {
        return Err(Error::format(format!(
            "bad image magic {img_magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"
        )));
    }
    let n = read_be_u32(&img_bytes, 4, "image count")? as usize;
    let rows = read_be_u32(&img_bytes, 8, "image rows")? as usize;
    let cols = read_be_u32(&img_bytes, 12, "image cols")? as usize;
    let expected = 16 + n * rows * cols;
    if img_bytes.len() != expected {
        return Err(Error::format(format!(
            "image payload is {} bytes, header implies {expected}",
            img_bytes.len()
        )));
    }

    let lbl_magic = read_be_u32(&lbl_bytes, 0, "label header")?;
    if lbl_magic != IDX_LABEL_MAGIC {
        return Err(Error::format(format!(
            "bad label magic {lbl_magic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"
        )));
    }
    let n_labels = read_be_u32(&lbl_bytes, 4, "label count")? as usize;
    if lbl_bytes.len() != 8 + n_labels {
        return Err(Error::format(format!(
            "label payload is {} bytes, header implies {}",
            lbl_bytes.len(),
            8 + n_labels
        )));
    }
    if n != n_labels {
        return Err(Error::format(format!("{n} images but {n_labels} labels")));
    }

    let mean = S::from_f64(stats.mean[0]);
    let inv_std = S::from_f64(1.0 / stats.std[0]);
    let scale = S::from_f64(1.0 / 255.0);
    let data: Vec<S> = img_bytes[16..]
        .iter()
        .map(|&b| (S::from_f64(b as f64) * scale - mean) * inv_std)
        .collect();
    let labels: Vec<usize> = lbl_bytes[8..].iter().map(|&b| b as usize).collect();

    Dataset::new(Tensor::from_vec(vec![n, rows, cols, 1], data)?, labels, num_classes, name)
}
