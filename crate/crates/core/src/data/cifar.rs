//! CIFAR binary format: per record one label byte (two for the 100-class
//! layout, coarse then fine) followed by 3072 pixel bytes in CHW planes.

use super::{Dataset, NormStats};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::path::Path;

const PIXELS: usize = 32 * 32 * 3;

pub fn load_cifar_binary<S: Scalar>(
    paths: &[impl AsRef<Path>],
    num_classes: usize,
    stats: &NormStats,
    name: &str,
) -> Result<Dataset<S>> {
    if paths.is_empty() {
        return Err(Error::arg("no CIFAR files given"));
    }
    let label_bytes = match num_classes {
        10 => 1,
        100 => 2,
        other => return Err(Error::arg(format!("CIFAR layout supports 10 or 100 classes, got {other}"))),
    };
    let record = label_bytes + PIXELS;

    let mean: Vec<S> = stats.mean.iter().map(|&m| S::from_f64(m)).collect();
    let inv_std: Vec<S> = stats.std.iter().map(|&s| S::from_f64(1.0 / s)).collect();
    let scale = S::from_f64(1.0 / 255.0);

    let mut data: Vec<S> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for path in paths {
        let bytes = std::fs::read(path.as_ref())?;
        if bytes.is_empty() || bytes.len() % record != 0 {
            return Err(Error::format(format!(
                "{}: {} bytes is not a multiple of the {record}-byte record",
                path.as_ref().display(),
                bytes.len()
            )));
        }
        for rec in bytes.chunks(record) {
            // the fine label is the last label byte
            labels.push(rec[label_bytes - 1] as usize);
            let px = &rec[label_bytes..];
            // CHW planes -> HWC rows
            for pos in 0..32 * 32 {
                for c in 0..3 {
                    let v = S::from_f64(px[c * 1024 + pos] as f64) * scale;
                    data.push((v - mean[c]) * inv_std[c]);
                }
            }
        }
    }
    let n = labels.len();
    Dataset::new(Tensor::from_vec(vec![n, 32, 32, 3], data)?, labels, num_classes, name)
}
