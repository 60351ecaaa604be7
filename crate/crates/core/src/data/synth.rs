//! Class-conditional Gaussian-blob images: a desk-scale fixture that is
//! linearly separable at the default signal level.

use super::Dataset;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SYNTH_SIGNAL: f64 = 1.0;
pub const SYNTH_NOISE: f64 = 0.5;

/// Deterministic synthetic dataset: each class has a fixed random mean
/// image; samples are that mean plus Gaussian pixel noise. Labels are
/// assigned round-robin, so class counts differ by at most one.
pub fn synth_dataset<S: Scalar>(
    n: usize,
    num_classes: usize,
    h: usize,
    w: usize,
    c: usize,
    seed: u64,
) -> Dataset<S> {
    let root = Rng::new(seed);
    let d = h * w * c;

    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|k| {
            let mut rng = root.substream_indexed("class_mean", &[k as u64]);
            (0..d).map(|_| rng.normal() * SYNTH_SIGNAL).collect()
        })
        .collect();

    let mut noise = root.substream("noise");
    let mut data: Vec<S> = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % num_classes;
        labels.push(label);
        let mean = &means[label];
        for &m in mean.iter() {
            data.push(S::from_f64(m + SYNTH_NOISE * noise.normal()));
        }
    }
    let images = Tensor::from_vec(vec![n, h, w, c], data).unwrap();
    Dataset { images, labels, num_classes, name: "synthetic".to_string() }
}
