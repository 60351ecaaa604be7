//! Elementwise ops, softmax, and dropout.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, Op};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.3989422804014327;

pub(crate) fn gelu_scalar<S: Scalar>(x: S) -> S {
    // exact Gaussian-CDF form: x * Phi(x)
    let half = S::from_f64(0.5);
    half * x * (S::ONE + (x * S::from_f64(FRAC_1_SQRT_2)).erf())
}

pub(crate) fn gelu_backward_acc<S: Scalar>(x: &[S], gout: &[S], dx: &mut [S]) {
    let half = S::from_f64(0.5);
    for ((d, g), &v) in dx.iter_mut().zip(gout).zip(x) {
        let phi_cdf = half * (S::ONE + (v * S::from_f64(FRAC_1_SQRT_2)).erf());
        let pdf = S::from_f64(INV_SQRT_2PI) * (-(half * v * v)).exp();
        *d += *g * (phi_cdf + v * pdf);
    }
}

/// Decompose a shape around `axis` into (outer, len, inner) for striding.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

pub(crate) fn softmax_forward<S: Scalar>(shape: &[usize], axis: usize, x: &[S]) -> Vec<S> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![S::ZERO; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = x[base];
            for l in 1..len {
                let v = x[base + l * inner];
                if v > max {
                    max = v;
                }
            }
            let mut total = S::ZERO;
            for l in 0..len {
                let e = (x[base + l * inner] - max).exp();
                out[base + l * inner] = e;
                total += e;
            }
            let inv = S::ONE / total;
            for l in 0..len {
                out[base + l * inner] *= inv;
            }
        }
    }
    out
}

pub(crate) fn softmax_backward_acc<S: Scalar>(
    shape: &[usize],
    axis: usize,
    y: &[S],
    gout: &[S],
    dx: &mut [S],
) {
    let (outer, len, inner) = axis_split(shape, axis);
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = S::ZERO;
            for l in 0..len {
                let idx = base + l * inner;
                dot += gout[idx] * y[idx];
            }
            for l in 0..len {
                let idx = base + l * inner;
                dx[idx] += y[idx] * (gout[idx] - dot);
            }
        }
    }
}

impl<S: Scalar> Graph<S> {
    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x).clone();
        self.note_relu_inputs(xv.data());
        let out: Vec<S> = xv.data().iter().map(|&v| v.maximum(S::ZERO)).collect();
        Ok(self.push_node(Tensor::from_vec(xv.shape().to_vec(), out)?, Op::Relu { x }, false))
    }

    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let out: Vec<S> = xv.data().iter().map(|&v| gelu_scalar(v)).collect();
        let shape = xv.shape().to_vec();
        Ok(self.push_node(Tensor::from_vec(shape, out)?, Op::Gelu { x }, false))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if axis >= xv.rank() {
            return Err(Error::arg(format!(
                "softmax axis {axis} out of range for shape {:?}",
                xv.shape()
            )));
        }
        let shape = xv.shape().to_vec();
        let out = softmax_forward(&shape, axis, xv.data());
        Ok(self.push_node(Tensor::from_vec(shape, out)?, Op::Softmax { x, axis }, false))
    }

    /// Inverted dropout: keeps an element with probability `1 - p` and
    /// scales it by `1/(1-p)`. Mask draws come from `rng` in element order.
    pub fn dropout(&mut self, x: NodeId, p: f64, rng: &mut Rng) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::arg(format!("dropout probability {p} outside [0, 1)")));
        }
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        if p == 0.0 {
            let out = xv.data().to_vec();
            let mask = vec![S::ONE; out.len()];
            return Ok(self.push_node(Tensor::from_vec(shape, out)?, Op::Dropout { x, mask }, false));
        }
        let keep_scale = S::from_f64(1.0 / (1.0 - p));
        let mask: Vec<S> = (0..xv.numel())
            .map(|_| if rng.uniform_f64() < p { S::ZERO } else { keep_scale })
            .collect();
        let out: Vec<S> = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        Ok(self.push_node(Tensor::from_vec(shape, out)?, Op::Dropout { x, mask }, false))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim(format!(
                "add shape mismatch: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let out: Vec<S> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push_node(Tensor::from_vec(shape, out)?, Op::Add { a, b }, false))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim(format!(
                "mul shape mismatch: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let out: Vec<S> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push_node(Tensor::from_vec(shape, out)?, Op::Mul { a, b }, false))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let sc = S::from_f64(c);
        let out: Vec<S> = self.value(x).data().iter().map(|&v| v * sc).collect();
        let shape = self.value(x).shape().to_vec();
        Ok(self.push_node(Tensor::from_vec(shape, out)?, Op::Scale { x, c }, false))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let mut total = S::ZERO;
        for v in self.value(x).data() {
            total += *v;
        }
        Ok(self.push_node(Tensor::scalar(total), Op::Sum { x }, false))
    }

    /// Mean of all elements, as a scalar node.
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.value(x).numel();
        let mut total = S::ZERO;
        for v in self.value(x).data() {
            total += *v;
        }
        total /= S::from_f64(n as f64);
        Ok(self.push_node(Tensor::scalar(total), Op::Mean { x }, false))
    }
}
