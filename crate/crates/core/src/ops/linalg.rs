//! Matrix-multiply kernels and the graph ops built on them.
//!
//! All products go through one blocked driver: the output is split into
//! contiguous row blocks and each block is handed to the gemm kernel. Per
//! output element the summation order over k is fixed by the kernel, so
//! results do not depend on the block split or thread count.

use crate::error::Result;
use crate::graph::{Graph, NodeId, Op};
use crate::parallel;
use crate::scalar::Scalar;
use crate::shapes;
use crate::tensor::Tensor;

const GEMM_MIN_BLOCK_ROWS: usize = 16;

/// `c[m,n] (beta) += a_view[m,k] @ b_view[k,n]` where the views are given by
/// explicit strides into `a` and `b`. `c` is row-major contiguous.
fn gemm_blocked<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    rsa: usize,
    csa: usize,
    b: &[S],
    rsb: usize,
    csb: usize,
    beta: S,
    c: &mut [S],
) {
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let block = parallel::block_rows_for(m, GEMM_MIN_BLOCK_ROWS);
    parallel::for_each_block(c, n, block, |bi, chunk| {
        let r0 = bi * block;
        let rows = chunk.len() / n;
        unsafe {
            S::gemm(
                rows,
                k,
                n,
                S::ONE,
                a.as_ptr().add(r0 * rsa),
                rsa as isize,
                csa as isize,
                b.as_ptr(),
                rsb as isize,
                csb as isize,
                beta,
                chunk.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    });
}

/// `c[m,n] = a[m,k] @ b[k,n]` (overwrite).
pub(crate) fn gemm_nn<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    gemm_blocked(m, k, n, a, k, 1, b, n, 1, S::ZERO, c);
}

/// `c[m,n] += a[m,k] @ b^T` with `b` stored row-major as `[n,k]`.
pub(crate) fn gemm_nt_acc<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    gemm_blocked(m, k, n, a, k, 1, b, 1, k, S::ONE, c);
}

/// `c[k,n] += a^T @ b` with `a` stored row-major as `[m,k]`, `b` as `[m,n]`.
pub(crate) fn gemm_tn_acc<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    gemm_blocked(k, m, n, a, 1, k, b, n, 1, S::ONE, c);
}

impl<S: Scalar> Graph<S> {
    /// 2-D matrix product `a[m,k] @ b[k,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = shapes::matmul_out_shape(self.value(a).shape(), self.value(b).shape())?;
        let (m, k, n) = (shape[0], self.value(a).shape()[1], shape[1]);
        let mut out = vec![S::ZERO; m * n];
        gemm_nn(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        self.charge_macs((m * k * n) as u64);
        Ok(self.push_node(Tensor::from_vec(shape, out)?, Op::Matmul { a, b }, false))
    }

    /// Batched matrix product `a[B,m,k] @ b[B,k,n]`.
    pub fn bmm(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = shapes::bmm_out_shape(self.value(a).shape(), self.value(b).shape())?;
        let (bs, m, n) = (shape[0], shape[1], shape[2]);
        let k = self.value(a).shape()[2];
        let mut out = vec![S::ZERO; bs * m * n];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            for s in 0..bs {
                gemm_nn(m, k, n, &av[s * m * k..(s + 1) * m * k], &bv[s * k * n..(s + 1) * k * n], &mut out[s * m * n..(s + 1) * m * n]);
            }
        }
        self.charge_macs((bs * m * k * n) as u64);
        Ok(self.push_node(Tensor::from_vec(shape, out)?, Op::Bmm { a, b }, false))
    }

    /// Affine map over the last axis: `x[..,in] @ w[in,out] + b[out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = shapes::linear_out_shape(
            self.value(x).shape(),
            self.value(w).shape(),
            self.value(b).shape(),
        )?;
        let din = self.value(w).shape()[0];
        let dout = self.value(w).shape()[1];
        let rows = self.value(x).numel() / din;
        let mut out = vec![S::ZERO; rows * dout];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let bv = self.value(b).data();
            gemm_nn(rows, din, dout, xv, wv, &mut out);
            for r in 0..rows {
                let row = &mut out[r * dout..(r + 1) * dout];
                for (o, bias) in row.iter_mut().zip(bv) {
                    *o += *bias;
                }
            }
        }
        self.charge_macs((rows * din * dout) as u64);
        Ok(self.push_node(Tensor::from_vec(shape, out)?, Op::Linear { x, w, b }, false))
    }
}
