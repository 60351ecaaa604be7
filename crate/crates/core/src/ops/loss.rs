//! Label-smoothed cross-entropy as a fused graph op.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, Op};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) fn label_smoothed_ce_backward_acc<S: Scalar>(
    logits_shape: &[usize],
    labels: &[usize],
    epsilon: f64,
    probs: &[S],
    gout: S,
    dlogits: &mut [S],
) {
    let (n, k) = (logits_shape[0], logits_shape[1]);
    let eps_k = S::from_f64(epsilon / k as f64);
    let on = S::from_f64(1.0 - epsilon);
    let inv_n = gout / S::from_f64(n as f64);
    for r in 0..n {
        for j in 0..k {
            let q = if j == labels[r] { eps_k + on } else { eps_k };
            dlogits[r * k + j] += (probs[r * k + j] - q) * inv_n;
        }
    }
}

impl<S: Scalar> Graph<S> {
    /// Mean over the batch of `-sum_k q_k log softmax(logits)_k` with the
    /// smoothed target `q = (1-eps) * onehot + eps/K`.
    pub fn label_smoothed_ce(&mut self, logits: NodeId, labels: &[usize], epsilon: f64) -> Result<NodeId> {
        let shape = self.value(logits).shape();
        if shape.len() != 2 {
            return Err(Error::dim(format!("logits must be [N,K], got {shape:?}")));
        }
        let (n, k) = (shape[0], shape[1]);
        if labels.len() != n {
            return Err(Error::arg(format!("{} labels for batch of {n}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::arg(format!("label {bad} out of range for {k} classes")));
        }
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::arg(format!("label smoothing {epsilon} outside [0, 1)")));
        }

        let xv = self.value(logits).data();
        let mut probs = vec![S::ZERO; n * k];
        let mut total = S::ZERO;
        let eps_k = S::from_f64(epsilon / k as f64);
        let on = S::from_f64(1.0 - epsilon);
        for r in 0..n {
            let row = &xv[r * k..(r + 1) * k];
            let mut max = row[0];
            for &v in row {
                if v > max {
                    max = v;
                }
            }
            let mut denom = S::ZERO;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                probs[r * k + j] = e;
                denom += e;
            }
            let log_denom = denom.ln();
            let inv = S::ONE / denom;
            let mut row_loss = S::ZERO;
            for (j, &v) in row.iter().enumerate() {
                probs[r * k + j] *= inv;
                let logp = v - max - log_denom;
                let q = if j == labels[r] { eps_k + on } else { eps_k };
                row_loss -= q * logp;
            }
            total += row_loss;
        }
        total /= S::from_f64(n as f64);

        Ok(self.push_node(
            Tensor::scalar(total),
            Op::LabelSmoothedCe { logits, labels: labels.to_vec(), epsilon, probs },
            false,
        ))
    }
}
