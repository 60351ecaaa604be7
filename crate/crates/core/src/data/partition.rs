//! Dirichlet non-IID partitioning over class labels.
//!
//! For each class, client proportions are drawn from Dirichlet(beta * 1_k)
//! and the class's sample indices are split by cumulative share with
//! largest-remainder rounding. Draws that leave any client under the
//! minimum are discarded and redrawn wholesale.

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSpec {
    pub num_clients: usize,
    /// Dirichlet concentration; smaller means more skewed clients.
    pub beta: f64,
    pub seed: u64,
    pub min_samples_per_client: usize,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        PartitionSpec { num_clients: 10, beta: 0.5, seed: 0, min_samples_per_client: 10 }
    }
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::config("num_clients must be positive"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::config(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Disjoint per-client index lists covering `[0, N)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Partition {
    pub spec: PartitionSpec,
    pub clients: Vec<Vec<usize>>,
}

impl Partition {
    pub fn client_sizes(&self) -> Vec<usize> {
        self.clients.iter().map(|c| c.len()).collect()
    }
}

/// Integer split of `total` proportional to `shares`, assigning leftover
/// units to the largest fractional parts (ties to the lower index).
fn largest_remainder(shares: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = Vec::with_capacity(shares.len());
    let mut fracs: Vec<(f64, usize)> = Vec::with_capacity(shares.len());
    let mut assigned = 0usize;
    for (i, &p) in shares.iter().enumerate() {
        let target = p * total as f64;
        let base = target.floor() as usize;
        counts.push(base);
        assigned += base;
        fracs.push((target - base as f64, i));
    }
    let mut left = total - assigned;
    fracs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in fracs.iter() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Partition sample indices by their labels.
pub fn partition_labels(labels: &[usize], num_classes: usize, spec: &PartitionSpec) -> Result<Partition> {
    spec.validate()?;
    if labels.is_empty() {
        return Err(Error::arg("cannot partition an empty dataset"));
    }
    let k = spec.num_clients;

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }

    let mut rng = Rng::new(spec.seed).substream("dirichlet");
    for _ in 0..MAX_REDRAWS {
        let mut clients: Vec<Vec<usize>> = vec![Vec::new(); k];
        for class_indices in &by_class {
            if class_indices.is_empty() {
                continue;
            }
            let shares = rng.dirichlet(spec.beta, k);
            let counts = largest_remainder(&shares, class_indices.len());
            let mut off = 0;
            for (client, &cnt) in clients.iter_mut().zip(&counts) {
                client.extend_from_slice(&class_indices[off..off + cnt]);
                off += cnt;
            }
        }
        if clients.iter().all(|c| c.len() >= spec.min_samples_per_client) {
            return Ok(Partition { spec: spec.clone(), clients });
        }
    }
    Err(Error::Partition(format!(
        "no draw satisfied min {} samples per client after {MAX_REDRAWS} attempts \
         ({} samples, {k} clients, beta {})",
        spec.min_samples_per_client,
        labels.len(),
        spec.beta
    )))
}

pub fn dirichlet_partition<S: Scalar>(dataset: &Dataset<S>, spec: &PartitionSpec) -> Result<Partition> {
    partition_labels(&dataset.labels, dataset.num_classes, spec)
}

/// Per-client class histograms plus heterogeneity summaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionStats {
    /// `histograms[client][class]` sample counts.
    pub histograms: Vec<Vec<usize>>,
    pub client_sizes: Vec<usize>,
    /// Largest class share within each client.
    pub max_share: Vec<f64>,
    pub median_max_share: f64,
    /// Inverse Simpson index per client (effective number of classes).
    pub effective_classes: Vec<f64>,
}

impl PartitionStats {
    pub fn compute(partition: &Partition, labels: &[usize], num_classes: usize) -> Self {
        let mut histograms = Vec::with_capacity(partition.clients.len());
        let mut client_sizes = Vec::new();
        let mut max_share = Vec::new();
        let mut effective_classes = Vec::new();
        for client in &partition.clients {
            let mut hist = vec![0usize; num_classes];
            for &i in client {
                hist[labels[i]] += 1;
            }
            let n = client.len().max(1);
            let shares: Vec<f64> = hist.iter().map(|&c| c as f64 / n as f64).collect();
            max_share.push(shares.iter().cloned().fold(0.0, f64::max));
            let simpson: f64 = shares.iter().map(|s| s * s).sum();
            effective_classes.push(if simpson > 0.0 { 1.0 / simpson } else { 0.0 });
            client_sizes.push(client.len());
            histograms.push(hist);
        }
        let median_max_share = median(&max_share);
        PartitionStats { histograms, client_sizes, max_share, median_max_share, effective_classes }
    }

    /// One CSV row per client: `client,<count per class...>`.
    pub fn to_csv(&self) -> String {
        let classes = self.histograms.first().map(|h| h.len()).unwrap_or(0);
        let mut out = String::from("client");
        for c in 0..classes {
            out.push_str(&format!(",class_{c}"));
        }
        out.push('\n');
        for (i, hist) in self.histograms.iter().enumerate() {
            out.push_str(&i.to_string());
            for c in hist {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

pub(crate) fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}
