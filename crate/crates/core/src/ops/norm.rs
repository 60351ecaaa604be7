//! Batch and layer normalization, differentiable through the statistics.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, Op};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check_channels<S: Scalar>(g: &Graph<S>, x: NodeId, gamma: NodeId, beta: NodeId, c: usize) -> Result<()> {
    if x == gamma || x == beta || gamma == beta {
        return Err(Error::arg("normalization inputs must be distinct nodes"));
    }
    for (name, id) in [("gamma", gamma), ("beta", beta)] {
        if g.value(id).shape() != [c] {
            return Err(Error::dim(format!(
                "{name} shape {:?} does not match {} channels of input {:?}",
                g.value(id).shape(),
                c,
                g.value(x).shape()
            )));
        }
    }
    Ok(())
}

/// Per-channel mean and biased variance over `N,H,W`.
fn batch_stats<S: Scalar>(shape: &[usize], x: &[S]) -> (Vec<S>, Vec<S>) {
    let c = shape[3];
    let count = shape[0] * shape[1] * shape[2];
    let inv = S::from_f64(1.0 / count as f64);
    let mut mean = vec![S::ZERO; c];
    for row in x.chunks(c) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += *v;
        }
    }
    for m in mean.iter_mut() {
        *m *= inv;
    }
    let mut var = vec![S::ZERO; c];
    for row in x.chunks(c) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            let d = *v - *m;
            *s += d * d;
        }
    }
    for s in var.iter_mut() {
        *s *= inv;
    }
    (mean, var)
}

fn bn_apply<S: Scalar>(x: &[S], c: usize, mean: &[S], var: &[S], eps: f64, gamma: &[S], beta: &[S]) -> Vec<S> {
    let rstd: Vec<S> = var.iter().map(|&v| S::ONE / (v + S::from_f64(eps)).sqrt()).collect();
    let mut out = vec![S::ZERO; x.len()];
    for (orow, xrow) in out.chunks_mut(c).zip(x.chunks(c)) {
        for j in 0..c {
            orow[j] = gamma[j] * (xrow[j] - mean[j]) * rstd[j] + beta[j];
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn batchnorm_train_backward<S: Scalar>(
    shape: &[usize],
    x: &[S],
    gamma: &[S],
    mean: &[S],
    var: &[S],
    eps: f64,
    gout: &[S],
    dx: Option<&mut [S]>,
    dgamma: Option<&mut [S]>,
    dbeta: Option<&mut [S]>,
) {
    let c = shape[3];
    let count = shape[0] * shape[1] * shape[2];
    let inv_m = S::from_f64(1.0 / count as f64);
    let rstd: Vec<S> = var.iter().map(|&v| S::ONE / (v + S::from_f64(eps)).sqrt()).collect();

    // per-channel sums of gout and gout * x_hat
    let mut s1 = vec![S::ZERO; c];
    let mut s2 = vec![S::ZERO; c];
    for (grow, xrow) in gout.chunks(c).zip(x.chunks(c)) {
        for j in 0..c {
            let xhat = (xrow[j] - mean[j]) * rstd[j];
            s1[j] += grow[j];
            s2[j] += grow[j] * xhat;
        }
    }
    if let Some(db) = dbeta {
        for (d, s) in db.iter_mut().zip(&s1) {
            *d += *s;
        }
    }
    if let Some(dg) = dgamma {
        for (d, s) in dg.iter_mut().zip(&s2) {
            *d += *s;
        }
    }
    if let Some(dx) = dx {
        for ((drow, grow), xrow) in dx.chunks_mut(c).zip(gout.chunks(c)).zip(x.chunks(c)) {
            for j in 0..c {
                let xhat = (xrow[j] - mean[j]) * rstd[j];
                drow[j] += gamma[j] * rstd[j] * (grow[j] - s1[j] * inv_m - xhat * s2[j] * inv_m);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn batchnorm_eval_backward<S: Scalar>(
    shape: &[usize],
    x: &[S],
    gamma: &[S],
    mean: &[S],
    var: &[S],
    eps: f64,
    gout: &[S],
    dx: Option<&mut [S]>,
    dgamma: Option<&mut [S]>,
    dbeta: Option<&mut [S]>,
) {
    let c = shape[3];
    let rstd: Vec<S> = var.iter().map(|&v| S::ONE / (v + S::from_f64(eps)).sqrt()).collect();
    if let Some(dx) = dx {
        for (drow, grow) in dx.chunks_mut(c).zip(gout.chunks(c)) {
            for j in 0..c {
                drow[j] += grow[j] * gamma[j] * rstd[j];
            }
        }
    }
    if let Some(dg) = dgamma {
        for (grow, xrow) in gout.chunks(c).zip(x.chunks(c)) {
            for j in 0..c {
                dg[j] += grow[j] * (xrow[j] - mean[j]) * rstd[j];
            }
        }
    }
    if let Some(db) = dbeta {
        for grow in gout.chunks(c) {
            for j in 0..c {
                db[j] += grow[j];
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn layernorm_backward<S: Scalar>(
    shape: &[usize],
    x: &[S],
    gamma: &[S],
    mean: &[S],
    rstd: &[S],
    gout: &[S],
    dx: Option<&mut [S]>,
    dgamma: Option<&mut [S]>,
    dbeta: Option<&mut [S]>,
) {
    let d = *shape.last().unwrap();
    let inv_d = S::from_f64(1.0 / d as f64);
    let rows = x.len() / d;

    if let Some(dg) = dgamma {
        for r in 0..rows {
            let (xrow, grow) = (&x[r * d..(r + 1) * d], &gout[r * d..(r + 1) * d]);
            for j in 0..d {
                dg[j] += grow[j] * (xrow[j] - mean[r]) * rstd[r];
            }
        }
    }
    if let Some(db) = dbeta {
        for grow in gout.chunks(d) {
            for j in 0..d {
                db[j] += grow[j];
            }
        }
    }
    if let Some(dx) = dx {
        for r in 0..rows {
            let xrow = &x[r * d..(r + 1) * d];
            let grow = &gout[r * d..(r + 1) * d];
            let mut s1 = S::ZERO; // sum gamma*gout
            let mut s2 = S::ZERO; // sum gamma*gout*xhat
            for j in 0..d {
                let xhat = (xrow[j] - mean[r]) * rstd[r];
                s1 += gamma[j] * grow[j];
                s2 += gamma[j] * grow[j] * xhat;
            }
            let drow = &mut dx[r * d..(r + 1) * d];
            for j in 0..d {
                let xhat = (xrow[j] - mean[r]) * rstd[r];
                drow[j] += rstd[r] * (gamma[j] * grow[j] - s1 * inv_d - xhat * s2 * inv_d);
            }
        }
    }
}

impl<S: Scalar> Graph<S> {
    /// Train-mode batch normalization over `N,H,W` per channel. Returns the
    /// output node plus the batch mean/variance so the caller can maintain
    /// running statistics.
    pub fn batchnorm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<(NodeId, Vec<S>, Vec<S>)> {
        let shape = self.value(x).shape().to_vec();
        if shape.len() != 4 {
            return Err(Error::dim(format!("batchnorm expects [N,H,W,C], got {shape:?}")));
        }
        let c = shape[3];
        check_channels(self, x, gamma, beta, c)?;
        let (mean, var) = batch_stats(&shape, self.value(x).data());
        let out = bn_apply(self.value(x).data(), c, &mean, &var, eps, self.value(gamma).data(), self.value(beta).data());
        let id = self.push_node(
            Tensor::from_vec(shape, out)?,
            Op::BatchNormTrain { x, gamma, beta, eps, mean: mean.clone(), var: var.clone() },
            false,
        );
        Ok((id, mean, var))
    }

    /// Eval-mode batch normalization using frozen running statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &[S],
        running_var: &[S],
        eps: f64,
    ) -> Result<NodeId> {
        let shape = self.value(x).shape().to_vec();
        if shape.len() != 4 {
            return Err(Error::dim(format!("batchnorm expects [N,H,W,C], got {shape:?}")));
        }
        let c = shape[3];
        check_channels(self, x, gamma, beta, c)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::dim(format!("running stats length must be {c}")));
        }
        let out = bn_apply(self.value(x).data(), c, running_mean, running_var, eps, self.value(gamma).data(), self.value(beta).data());
        Ok(self.push_node(
            Tensor::from_vec(shape, out)?,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                eps,
                mean: running_mean.to_vec(),
                var: running_var.to_vec(),
            },
            false,
        ))
    }

    /// Normalization over the last axis with per-feature affine.
    pub fn layernorm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        if x == gamma || x == beta || gamma == beta {
            return Err(Error::arg("normalization inputs must be distinct nodes"));
        }
        let shape = self.value(x).shape().to_vec();
        let d = *shape.last().ok_or_else(|| Error::dim("layernorm on rank-0 tensor"))?;
        if self.value(gamma).shape() != [d] || self.value(beta).shape() != [d] {
            return Err(Error::dim(format!(
                "layernorm affine shapes {:?}/{:?} do not match feature dim {d}",
                self.value(gamma).shape(),
                self.value(beta).shape()
            )));
        }
        let rows = self.value(x).numel() / d;
        let inv_d = S::from_f64(1.0 / d as f64);
        let mut out = vec![S::ZERO; rows * d];
        let mut means = vec![S::ZERO; rows];
        let mut rstds = vec![S::ZERO; rows];
        {
            let xv = self.value(x).data();
            let gv = self.value(gamma).data();
            let bv = self.value(beta).data();
            for r in 0..rows {
                let xrow = &xv[r * d..(r + 1) * d];
                let mut mean = S::ZERO;
                for v in xrow {
                    mean += *v;
                }
                mean *= inv_d;
                let mut var = S::ZERO;
                for v in xrow {
                    let dlt = *v - mean;
                    var += dlt * dlt;
                }
                var *= inv_d;
                let rstd = S::ONE / (var + S::from_f64(eps)).sqrt();
                means[r] = mean;
                rstds[r] = rstd;
                let orow = &mut out[r * d..(r + 1) * d];
                for j in 0..d {
                    orow[j] = gv[j] * (xrow[j] - mean) * rstd + bv[j];
                }
            }
        }
        Ok(self.push_node(
            Tensor::from_vec(shape, out)?,
            Op::LayerNorm { x, gamma, beta, mean: means, rstd: rstds },
            false,
        ))
    }
}
