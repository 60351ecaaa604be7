//! Dataset ingestion, synthetic fixtures, and non-IID partitioning.

mod cifar;
mod idx;
mod partition;
mod synth;

pub use cifar::load_cifar_binary;
pub use idx::load_idx;
pub use partition::{dirichlet_partition, partition_labels, Partition, PartitionSpec, PartitionStats};
pub use synth::synth_dataset;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::path::Path;

/// Labelled image set, pixels already normalized.
#[derive(Debug, Clone)]
pub struct Dataset<S: Scalar> {
    pub images: Tensor<S>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(images: Tensor<S>, labels: Vec<usize>, num_classes: usize, name: impl Into<String>) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::dim(format!("images must be [N,H,W,C], got {:?}", images.shape())));
        }
        if images.dim(0) != labels.len() {
            return Err(Error::format(format!(
                "{} images but {} labels",
                images.dim(0),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::format(format!("label {bad} outside [0, {num_classes})")));
        }
        Ok(Dataset { images, labels, num_classes, name: name.into() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// [H, W, C] of one sample.
    pub fn sample_shape(&self) -> [usize; 3] {
        [self.images.dim(1), self.images.dim(2), self.images.dim(3)]
    }

    fn row_len(&self) -> usize {
        self.images.numel() / self.len()
    }

    /// Gather the given samples into a contiguous batch.
    pub fn gather(&self, indices: &[usize]) -> (Tensor<S>, Vec<usize>) {
        let row = self.row_len();
        let mut data = Vec::with_capacity(indices.len() * row);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * row..(i + 1) * row]);
            labels.push(self.labels[i]);
        }
        let [h, w, c] = self.sample_shape();
        (Tensor::from_vec(vec![indices.len(), h, w, c], data).unwrap(), labels)
    }

    /// New dataset holding the given samples, in list order.
    pub fn subset(&self, indices: &[usize]) -> Dataset<S> {
        let (images, labels) = self.gather(indices);
        Dataset { images, labels, num_classes: self.num_classes, name: self.name.clone() }
    }

    /// First `n` samples.
    pub fn take(&self, n: usize) -> Dataset<S> {
        let n = n.min(self.len());
        let indices: Vec<usize> = (0..n).collect();
        self.subset(&indices)
    }

    pub fn cast<T: Scalar>(&self) -> Dataset<T> {
        Dataset {
            images: self.images.cast(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            name: self.name.clone(),
        }
    }
}

/// Per-channel normalization constants, fixed per dataset.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Constants computed once from each training split.
pub fn builtin_norm_stats(name: &str) -> Option<NormStats> {
    let (mean, std): (&[f64], &[f64]) = match name {
        "mnist" => (&[0.1307], &[0.3081]),
        "fashion_mnist" => (&[0.2860], &[0.3530]),
        "emnist_balanced" => (&[0.1751], &[0.3332]),
        "cifar10" => (&[0.4914, 0.4822, 0.4465], &[0.2470, 0.2435, 0.2616]),
        "cifar100" => (&[0.5071, 0.4865, 0.4409], &[0.2673, 0.2564, 0.2762]),
        _ => return None,
    };
    Some(NormStats { mean: mean.to_vec(), std: std.to_vec() })
}

/// Conventional file names per dataset, relative to a data directory.
pub struct NamedSplit {
    pub images: Vec<String>,
    pub labels: Option<String>,
}

/// Load a named IDX/CIFAR dataset split ("train" or "test") from `dir`.
pub fn load_named<S: Scalar>(name: &str, dir: &Path, split: &str) -> Result<Dataset<S>> {
    let stats = builtin_norm_stats(name)
        .ok_or_else(|| Error::config(format!("unknown dataset '{name}'")))?;
    match name {
        "mnist" | "fashion_mnist" | "emnist_balanced" => {
            let classes = if name == "emnist_balanced" { 47 } else { 10 };
            let prefix = if split == "train" { "train" } else { "t10k" };
            let images = dir.join(format!("{prefix}-images-idx3-ubyte"));
            let labels = dir.join(format!("{prefix}-labels-idx1-ubyte"));
            load_idx(&images, &labels, &stats, classes, name)
        }
        "cifar10" => {
            let files: Vec<std::path::PathBuf> = if split == "train" {
                (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect()
            } else {
                vec![dir.join("test_batch.bin")]
            };
            load_cifar_binary(&files, 10, &stats, name)
        }
        "cifar100" => {
            let file = if split == "train" { "train.bin" } else { "test.bin" };
            load_cifar_binary(&[dir.join(file)], 100, &stats, name)
        }
        other => Err(Error::config(format!("unknown dataset '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_invariants_enforced() {
        let img = Tensor::<f32>::zeros(vec![2, 4, 4, 1]);
        assert!(Dataset::new(img.clone(), vec![0, 1], 2, "t").is_ok());
        assert!(Dataset::new(img.clone(), vec![0], 2, "t").is_err());
        assert!(Dataset::new(img, vec![0, 5], 2, "t").is_err());
    }

    #[test]
    fn subset_preserves_order() {
        let data: Vec<f32> = (0..8).map(|v| v as f32).collect();
        let img = Tensor::from_vec(vec![4, 1, 2, 1], data).unwrap();
        let ds = Dataset::new(img, vec![0, 1, 0, 1], 2, "t").unwrap();
        let sub = ds.subset(&[2, 0]);
        assert_eq!(sub.images.data(), &[4.0, 5.0, 0.0, 1.0]);
        assert_eq!(sub.labels, vec![0, 0]);
    }
}
