//! Layout ops: reshape, transposes, head split/merge, token permutation.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, Op};
use crate::scalar::Scalar;
use crate::shapes;
use crate::tensor::Tensor;

pub(crate) fn transpose_last2<S: Scalar>(shape: &[usize], x: &[S]) -> Vec<S> {
    let n = shape.len();
    let (a, b) = (shape[n - 2], shape[n - 1]);
    let outer: usize = shape[..n - 2].iter().product();
    let mut out = vec![S::ZERO; x.len()];
    for o in 0..outer {
        let base = o * a * b;
        for i in 0..a {
            for j in 0..b {
                out[base + j * a + i] = x[base + i * b + j];
            }
        }
    }
    out
}

/// Accumulate the transpose of `gout` (shaped `out_shape`) into `dx`.
pub(crate) fn transpose_last2_acc<S: Scalar>(out_shape: &[usize], gout: &[S], dx: &mut [S]) {
    let t = transpose_last2(out_shape, gout);
    for (d, g) in dx.iter_mut().zip(&t) {
        *d += *g;
    }
}

/// `[N,T,D] -> [N*h,T,D/h]`: head-major blocks, token order preserved.
pub(crate) fn split_heads<S: Scalar>(shape: &[usize], heads: usize, x: &[S]) -> Vec<S> {
    let (n, t, d) = (shape[0], shape[1], shape[2]);
    let dh = d / heads;
    let mut out = vec![S::ZERO; x.len()];
    for ni in 0..n {
        for hi in 0..heads {
            for ti in 0..t {
                let src = (ni * t + ti) * d + hi * dh;
                let dst = (((ni * heads + hi) * t) + ti) * dh;
                out[dst..dst + dh].copy_from_slice(&x[src..src + dh]);
            }
        }
    }
    out
}

/// `[N*h,T,dh] -> [N,T,D]`, inverse of [`split_heads`].
pub(crate) fn merge_heads<S: Scalar>(shape: &[usize], heads: usize, x: &[S]) -> Vec<S> {
    let (nh, t, dh) = (shape[0], shape[1], shape[2]);
    let n = nh / heads;
    let d = dh * heads;
    let mut out = vec![S::ZERO; x.len()];
    for ni in 0..n {
        for hi in 0..heads {
            for ti in 0..t {
                let src = (((ni * heads + hi) * t) + ti) * dh;
                let dst = (ni * t + ti) * d + hi * dh;
                out[dst..dst + dh].copy_from_slice(&x[src..src + dh]);
            }
        }
    }
    out
}

/// Backward of split: merge the head-major gradient and accumulate.
pub(crate) fn merge_heads_acc<S: Scalar>(out_shape: &[usize], heads: usize, gout: &[S], dx: &mut [S]) {
    let merged = merge_heads(out_shape, heads, gout);
    for (d, g) in dx.iter_mut().zip(&merged) {
        *d += *g;
    }
}

/// Backward of merge: split the gradient back out and accumulate.
pub(crate) fn split_heads_acc<S: Scalar>(out_shape: &[usize], heads: usize, gout: &[S], dx: &mut [S]) {
    let split = split_heads(out_shape, heads, gout);
    for (d, g) in dx.iter_mut().zip(&split) {
        *d += *g;
    }
}

/// Scatter `gout[n,t,:]` into `dx[n,perm[t],:]`.
pub(crate) fn permute_tokens_acc_inverse<S: Scalar>(
    x_shape: &[usize],
    perm: &[usize],
    gout: &[S],
    dx: &mut [S],
) {
    let (n, t, d) = (x_shape[0], x_shape[1], x_shape[2]);
    for ni in 0..n {
        for ti in 0..t {
            let src = (ni * t + ti) * d;
            let dst = (ni * t + perm[ti]) * d;
            for j in 0..d {
                dx[dst + j] += gout[src + j];
            }
        }
    }
}

impl<S: Scalar> Graph<S> {
    /// Same elements under a new shape.
    pub fn reshape(&mut self, x: NodeId, shape: impl Into<Vec<usize>>) -> Result<NodeId> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(Error::dim(format!(
                "reshape {:?} -> {:?} changes element count",
                self.value(x).shape(),
                shape
            )));
        }
        let data = self.value(x).data().to_vec();
        Ok(self.push_node(Tensor::from_vec(shape, data)?, Op::Reshape { x }, false))
    }

    /// Swap the last two axes.
    pub fn transpose_last2(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = shapes::transpose_last2_shape(self.value(x).shape())?;
        let out = transpose_last2(self.value(x).shape(), self.value(x).data());
        Ok(self.push_node(Tensor::from_vec(shape, out)?, Op::TransposeLast2 { x }, false))
    }

    /// `[N,T,D] -> [N*h,T,D/h]` for per-head attention.
    pub fn split_heads(&mut self, x: NodeId, heads: usize) -> Result<NodeId> {
        let shape = shapes::split_heads_shape(self.value(x).shape(), heads)?;
        let out = split_heads(self.value(x).shape(), heads, self.value(x).data());
        Ok(self.push_node(Tensor::from_vec(shape, out)?, Op::SplitHeads { x, heads }, false))
    }

    /// `[N*h,T,dh] -> [N,T,D]`, inverse of [`Graph::split_heads`].
    pub fn merge_heads(&mut self, x: NodeId, heads: usize) -> Result<NodeId> {
        let shape = shapes::merge_heads_shape(self.value(x).shape(), heads)?;
        let out = merge_heads(self.value(x).shape(), heads, self.value(x).data());
        Ok(self.push_node(Tensor::from_vec(shape, out)?, Op::MergeHeads { x, heads }, false))
    }

    /// Reorder the token axis of `[N,T,D]`: output token `t` is input token
    /// `perm[t]`.
    pub fn permute_tokens(&mut self, x: NodeId, perm: &[usize]) -> Result<NodeId> {
        let sh = self.value(x).shape().to_vec();
        if sh.len() != 3 {
            return Err(Error::dim(format!("permute_tokens expects [N,T,D], got {sh:?}")));
        }
        let (n, t, d) = (sh[0], sh[1], sh[2]);
        if perm.len() != t {
            return Err(Error::arg(format!("permutation length {} != token count {t}", perm.len())));
        }
        let mut seen = vec![false; t];
        for &p in perm {
            if p >= t || seen[p] {
                return Err(Error::arg("not a permutation of the token axis".to_string()));
            }
            seen[p] = true;
        }
        let xv = self.value(x).data();
        let mut out = vec![S::ZERO; xv.len()];
        for ni in 0..n {
            for ti in 0..t {
                let src = (ni * t + perm[ti]) * d;
                let dst = (ni * t + ti) * d;
                out[dst..dst + d].copy_from_slice(&xv[src..src + d]);
            }
        }
        Ok(self.push_node(Tensor::from_vec(sh, out)?, Op::PermuteTokens { x, perm: perm.to_vec() }, false))
    }
}
