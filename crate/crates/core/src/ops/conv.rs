//! Convolutions. The standard 3x3 path lowers to im2col + gemm; the
//! depthwise path uses direct loops (one filter per channel, so the gemm
//! reformulation buys nothing).

use crate::error::Result;
use crate::graph::{Graph, NodeId, Op};
use crate::parallel;
use crate::scalar::Scalar;
use crate::shapes::{self, same_pad_before, Padding};
use crate::tensor::Tensor;

struct ConvGeometry {
    n: usize,
    h: usize,
    w: usize,
    c_in: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad_t: usize,
    pad_l: usize,
}

fn geometry(x: &[usize], kh: usize, kw: usize, stride: usize, padding: Padding) -> Result<ConvGeometry> {
    let oh = shapes::conv_out_extent(x[1], kh, stride, padding)?;
    let ow = shapes::conv_out_extent(x[2], kw, stride, padding)?;
    let (pad_t, pad_l) = match padding {
        Padding::Same => (same_pad_before(x[1], kh, stride), same_pad_before(x[2], kw, stride)),
        Padding::Valid => (0, 0),
    };
    Ok(ConvGeometry { n: x[0], h: x[1], w: x[2], c_in: x[3], kh, kw, oh, ow, stride, pad_t, pad_l })
}

/// Lower `x[N,H,W,C]` to `cols[N*OH*OW, KH*KW*C]`, zero-filling padding.
fn im2col<S: Scalar>(g: &ConvGeometry, x: &[S]) -> Vec<S> {
    let k = g.kh * g.kw * g.c_in;
    let rows = g.n * g.oh * g.ow;
    let mut cols = vec![S::ZERO; rows * k];
    let block = parallel::block_rows_for(rows, 64);
    parallel::for_each_block(&mut cols, k, block, |bi, chunk| {
        let r0 = bi * block;
        for (local, row) in chunk.chunks_mut(k).enumerate() {
            let r = r0 + local;
            let n = r / (g.oh * g.ow);
            let oh = (r / g.ow) % g.oh;
            let ow = r % g.ow;
            for dh in 0..g.kh {
                let ih = (oh * g.stride + dh) as isize - g.pad_t as isize;
                if ih < 0 || ih >= g.h as isize {
                    continue;
                }
                for dw in 0..g.kw {
                    let iw = (ow * g.stride + dw) as isize - g.pad_l as isize;
                    if iw < 0 || iw >= g.w as isize {
                        continue;
                    }
                    let src = ((n * g.h + ih as usize) * g.w + iw as usize) * g.c_in;
                    let dst = (dh * g.kw + dw) * g.c_in;
                    row[dst..dst + g.c_in].copy_from_slice(&x[src..src + g.c_in]);
                }
            }
        }
    });
    cols
}

/// Scatter `cols`-layout gradients back onto the input image.
fn col2im_acc<S: Scalar>(g: &ConvGeometry, dcols: &[S], dx: &mut [S]) {
    let k = g.kh * g.kw * g.c_in;
    let rows = g.n * g.oh * g.ow;
    for r in 0..rows {
        let n = r / (g.oh * g.ow);
        let oh = (r / g.ow) % g.oh;
        let ow = r % g.ow;
        let row = &dcols[r * k..(r + 1) * k];
        for dh in 0..g.kh {
            let ih = (oh * g.stride + dh) as isize - g.pad_t as isize;
            if ih < 0 || ih >= g.h as isize {
                continue;
            }
            for dw in 0..g.kw {
                let iw = (ow * g.stride + dw) as isize - g.pad_l as isize;
                if iw < 0 || iw >= g.w as isize {
                    continue;
                }
                let dst = ((n * g.h + ih as usize) * g.w + iw as usize) * g.c_in;
                let src = (dh * g.kw + dw) * g.c_in;
                for c in 0..g.c_in {
                    dx[dst + c] += row[src + c];
                }
            }
        }
    }
}

pub(crate) fn conv2d_grad_w<S: Scalar>(
    _x_shape: &[usize],
    w_shape: &[usize],
    cols: &[S],
    gout: &[S],
    dw: &mut [S],
) {
    let k = w_shape[0] * w_shape[1] * w_shape[2];
    let cout = w_shape[3];
    let rows = gout.len() / cout;
    super::linalg::gemm_tn_acc(rows, k, cout, cols, gout, dw);
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_grad_x<S: Scalar>(
    x_shape: &[usize],
    w_shape: &[usize],
    w_data: &[S],
    gout: &[S],
    stride: usize,
    padding: Padding,
    dx: &mut [S],
) {
    let g = geometry(x_shape, w_shape[0], w_shape[1], stride, padding).expect("shapes validated at forward");
    let k = g.kh * g.kw * g.c_in;
    let cout = w_shape[3];
    let rows = g.n * g.oh * g.ow;
    let mut dcols = vec![S::ZERO; rows * k];
    super::linalg::gemm_nt_acc(rows, cout, k, gout, w_data, &mut dcols);
    col2im_acc(&g, &dcols, dx);
}

pub(crate) fn depthwise_grad_w<S: Scalar>(
    x_shape: &[usize],
    w_shape: &[usize],
    x: &[S],
    gout: &[S],
    stride: usize,
    padding: Padding,
    dw: &mut [S],
) {
    let g = geometry(x_shape, w_shape[0], w_shape[1], stride, padding).expect("shapes validated at forward");
    let c = g.c_in;
    for n in 0..g.n {
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                let go = &gout[((n * g.oh + oh) * g.ow + ow) * c..][..c];
                for dh in 0..g.kh {
                    let ih = (oh * g.stride + dh) as isize - g.pad_t as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    for dwi in 0..g.kw {
                        let iw = (ow * g.stride + dwi) as isize - g.pad_l as isize;
                        if iw < 0 || iw >= g.w as isize {
                            continue;
                        }
                        let xs = &x[((n * g.h + ih as usize) * g.w + iw as usize) * c..][..c];
                        let ws = &mut dw[(dh * g.kw + dwi) * c..][..c];
                        for ci in 0..c {
                            ws[ci] += xs[ci] * go[ci];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn depthwise_grad_x<S: Scalar>(
    x_shape: &[usize],
    w_shape: &[usize],
    w: &[S],
    gout: &[S],
    stride: usize,
    padding: Padding,
    dx: &mut [S],
) {
    let g = geometry(x_shape, w_shape[0], w_shape[1], stride, padding).expect("shapes validated at forward");
    let c = g.c_in;
    for n in 0..g.n {
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                let go = &gout[((n * g.oh + oh) * g.ow + ow) * c..][..c];
                for dh in 0..g.kh {
                    let ih = (oh * g.stride + dh) as isize - g.pad_t as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    for dwi in 0..g.kw {
                        let iw = (ow * g.stride + dwi) as isize - g.pad_l as isize;
                        if iw < 0 || iw >= g.w as isize {
                            continue;
                        }
                        let xs = &mut dx[((n * g.h + ih as usize) * g.w + iw as usize) * c..][..c];
                        let ws = &w[(dh * g.kw + dwi) * c..][..c];
                        for ci in 0..c {
                            xs[ci] += ws[ci] * go[ci];
                        }
                    }
                }
            }
        }
    }
}

impl<S: Scalar> Graph<S> {
    /// Standard convolution, no bias: `x[N,H,W,Cin] * w[kh,kw,Cin,Cout]`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize, padding: Padding) -> Result<NodeId> {
        let out_shape = shapes::conv2d_out_shape(self.value(x).shape(), self.value(w).shape(), stride, padding)?;
        let w_shape = self.value(w).shape().to_vec();
        let g = geometry(self.value(x).shape(), w_shape[0], w_shape[1], stride, padding)?;
        let k = g.kh * g.kw * g.c_in;
        let cout = w_shape[3];
        let rows = g.n * g.oh * g.ow;

        let cols = im2col(&g, self.value(x).data());
        let mut out = vec![S::ZERO; rows * cout];
        super::linalg::gemm_nn(rows, k, cout, &cols, self.value(w).data(), &mut out);

        self.charge_macs((g.kh * g.kw * g.c_in * cout * g.oh * g.ow * g.n) as u64);
        Ok(self.push_node(
            Tensor::from_vec(out_shape, out)?,
            Op::Conv2d { x, w, stride, padding, cols },
            false,
        ))
    }

    /// Per-channel spatial filtering: `x[N,H,W,C] * w[kh,kw,C]`.
    pub fn depthwise_conv2d(&mut self, x: NodeId, w: NodeId, stride: usize, padding: Padding) -> Result<NodeId> {
        let out_shape = shapes::depthwise_out_shape(self.value(x).shape(), self.value(w).shape(), stride, padding)?;
        let w_shape = self.value(w).shape().to_vec();
        let g = geometry(self.value(x).shape(), w_shape[0], w_shape[1], stride, padding)?;
        let c = g.c_in;
        let rows = g.n * g.oh * g.ow;
        let mut out = vec![S::ZERO; rows * c];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let block = parallel::block_rows_for(rows, 32);
            parallel::for_each_block(&mut out, c, block, |bi, chunk| {
                let r0 = bi * block;
                for (local, row) in chunk.chunks_mut(c).enumerate() {
                    let r = r0 + local;
                    let n = r / (g.oh * g.ow);
                    let oh = (r / g.ow) % g.oh;
                    let ow = r % g.ow;
                    for dh in 0..g.kh {
                        let ih = (oh * g.stride + dh) as isize - g.pad_t as isize;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        for dw in 0..g.kw {
                            let iw = (ow * g.stride + dw) as isize - g.pad_l as isize;
                            if iw < 0 || iw >= g.w as isize {
                                continue;
                            }
                            let xs = &xv[((n * g.h + ih as usize) * g.w + iw as usize) * c..][..c];
                            let ws = &wv[(dh * g.kw + dw) * c..][..c];
                            for ci in 0..c {
                                row[ci] += xs[ci] * ws[ci];
                            }
                        }
                    }
                }
            });
        }

        self.charge_macs((g.kh * g.kw * c * g.oh * g.ow * g.n) as u64);
        Ok(self.push_node(
            Tensor::from_vec(out_shape, out)?,
            Op::DepthwiseConv2d { x, w, stride, padding },
            false,
        ))
    }

    /// 1x1 channel projection: `x[N,H,W,Cin] * w[Cin,Cout]`.
    pub fn pointwise_conv2d(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let out_shape = shapes::pointwise_out_shape(self.value(x).shape(), self.value(w).shape())?;
        let (cin, cout) = (self.value(w).shape()[0], self.value(w).shape()[1]);
        let positions = self.value(x).numel() / cin;
        let mut out = vec![S::ZERO; positions * cout];
        super::linalg::gemm_nn(positions, cin, cout, self.value(x).data(), self.value(w).data(), &mut out);
        self.charge_macs((positions * cin * cout) as u64);
        Ok(self.push_node(Tensor::from_vec(out_shape, out)?, Op::PointwiseConv2d { x, w }, false))
    }
}
