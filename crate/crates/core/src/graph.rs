use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::shapes::Padding;
use crate::tensor::Tensor;

/// Train/eval switch for stochastic and statistics-tracking ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

/// Operation record: inputs plus whatever the backward pass needs.
#[derive(Debug)]
pub(crate) enum Op<S: Scalar> {
    Leaf,
    Conv2d { x: NodeId, w: NodeId, stride: usize, padding: Padding, cols: Vec<S> },
    DepthwiseConv2d { x: NodeId, w: NodeId, stride: usize, padding: Padding },
    PointwiseConv2d { x: NodeId, w: NodeId },
    BatchNormTrain { x: NodeId, gamma: NodeId, beta: NodeId, eps: f64, mean: Vec<S>, var: Vec<S> },
    BatchNormEval { x: NodeId, gamma: NodeId, beta: NodeId, eps: f64, mean: Vec<S>, var: Vec<S> },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, mean: Vec<S>, rstd: Vec<S> },
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Matmul { a: NodeId, b: NodeId },
    Bmm { a: NodeId, b: NodeId },
    TransposeLast2 { x: NodeId },
    Reshape { x: NodeId },
    SplitHeads { x: NodeId, heads: usize },
    MergeHeads { x: NodeId, heads: usize },
    PermuteTokens { x: NodeId, perm: Vec<usize> },
    Relu { x: NodeId },
    Gelu { x: NodeId },
    Softmax { x: NodeId, axis: usize },
    Dropout { x: NodeId, mask: Vec<S> },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    Sum { x: NodeId },
    Mean { x: NodeId },
    LabelSmoothedCe { logits: NodeId, labels: Vec<usize>, epsilon: f64, probs: Vec<S> },
}

impl<S: Scalar> Op<S> {
    fn inputs(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Leaf => vec![],
            Conv2d { x, w, .. } | DepthwiseConv2d { x, w, .. } | PointwiseConv2d { x, w } => {
                vec![*x, *w]
            }
            BatchNormTrain { x, gamma, beta, .. }
            | BatchNormEval { x, gamma, beta, .. }
            | LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Linear { x, w, b } => vec![*x, *w, *b],
            Matmul { a, b } | Bmm { a, b } | Add { a, b } | Mul { a, b } => vec![*a, *b],
            TransposeLast2 { x }
            | Reshape { x }
            | SplitHeads { x, .. }
            | MergeHeads { x, .. }
            | PermuteTokens { x, .. }
            | Relu { x }
            | Gelu { x }
            | Softmax { x, .. }
            | Dropout { x, .. }
            | Scale { x, .. }
            | Sum { x }
            | Mean { x } => vec![*x],
            LabelSmoothedCe { logits, .. } => vec![*logits],
        }
    }
}

pub(crate) struct Node<S: Scalar> {
    pub(crate) value: Tensor<S>,
    pub(crate) op: Op<S>,
    pub(crate) requires_grad: bool,
}

/// Append-only tape of operations. Built during a forward pass; one
/// [`Graph::backward`] call populates gradients for every reachable
/// `requires_grad` leaf.
pub struct Graph<S: Scalar> {
    pub(crate) nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
    macs: u64,
    backward_done: bool,
    min_relu_abs: Option<f64>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), macs: 0, backward_done: false, min_relu_abs: None }
    }

    /// Insert a tensor as a graph leaf. Gradients flow into it when its
    /// `requires_grad` flag is set.
    pub fn leaf(&mut self, value: Tensor<S>) -> NodeId {
        let rg = value.requires_grad;
        self.push_node(value, Op::Leaf, rg)
    }

    pub(crate) fn push_node(&mut self, value: Tensor<S>, op: Op<S>, leaf_requires: bool) -> NodeId {
        let requires_grad = leaf_requires
            || op.inputs().iter().any(|id| self.nodes[id.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulate count charged by the ops executed so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub(crate) fn charge_macs(&mut self, macs: u64) {
        self.macs += macs;
    }

    pub(crate) fn note_relu_inputs(&mut self, data: &[S]) {
        let mut m = self.min_relu_abs.unwrap_or(f64::INFINITY);
        for v in data {
            m = m.min(v.to_f64().abs());
        }
        self.min_relu_abs = Some(m);
    }

    /// Smallest |input| seen by any relu in this graph, if one ran.
    /// Lets gradient checks verify evaluation points sit away from kinks.
    pub fn min_relu_input_abs(&self) -> Option<f64> {
        self.min_relu_abs
    }

    /// Gradient of the loss w.r.t. a node, once backward has run.
    pub fn grad(&self, id: NodeId) -> Option<&[S]> {
        self.grads[id.0].as_deref()
    }

    pub fn take_grad(&mut self, id: NodeId) -> Option<Vec<S>> {
        self.grads[id.0].take()
    }

    /// Reverse pass from a scalar loss node. Each graph accepts exactly one
    /// backward call; rebuild the graph for another pass.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(Error::state("backward already ran on this graph"));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::arg(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.backward_done = true;
        self.grads[loss.0] = Some(vec![S::ONE]);

        let nodes = &self.nodes;
        let grads = &mut self.grads;

        for i in (0..nodes.len()).rev() {
            if !nodes[i].requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            step_backward(nodes, grads, i, &gout)?;
            grads[i] = Some(gout);
        }
        Ok(())
    }
}

fn wants<S: Scalar>(nodes: &[Node<S>], id: NodeId) -> bool {
    nodes[id.0].requires_grad
}

fn buf<'a, S: Scalar>(grads: &'a mut [Option<Vec<S>>], id: NodeId, numel: usize) -> &'a mut [S] {
    let slot = &mut grads[id.0];
    if slot.is_none() {
        *slot = Some(vec![S::ZERO; numel]);
    }
    slot.as_mut().unwrap()
}

/// Disjoint grad buffers for a three-input op (x, gamma, beta). Buffers are
/// allocated only for inputs that require grad; the node ids are distinct by
/// construction of the norm ops.
fn buf3<'a, S: Scalar>(
    nodes: &[Node<S>],
    grads: &'a mut [Option<Vec<S>>],
    ids: [NodeId; 3],
) -> [Option<&'a mut [S]>; 3] {
    let want: Vec<bool> = ids.iter().map(|id| nodes[id.0].requires_grad).collect();
    for (i, id) in ids.iter().enumerate() {
        if want[i] && grads[id.0].is_none() {
            grads[id.0] = Some(vec![S::ZERO; nodes[id.0].value.numel()]);
        }
    }
    let [a, b, c] = grads
        .get_disjoint_mut([ids[0].0, ids[1].0, ids[2].0])
        .expect("norm op inputs must be distinct nodes");
    let mut it = [(a, want[0]), (b, want[1]), (c, want[2])]
        .map(|(slot, w)| if w { slot.as_mut().map(|v| v.as_mut_slice()) } else { None });
    [it[0].take(), it[1].take(), it[2].take()]
}

fn step_backward<S: Scalar>(
    nodes: &[Node<S>],
    grads: &mut [Option<Vec<S>>],
    i: usize,
    gout: &[S],
) -> Result<()> {
    use crate::ops::{act, conv, linalg, loss as loss_ops, norm, shape_ops};
    let out_val = &nodes[i].value;
    match &nodes[i].op {
        Op::Leaf => {}

        Op::Conv2d { x, w, stride, padding, cols } => {
            let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
            if wants(nodes, *w) {
                conv::conv2d_grad_w(xv.shape(), wv.shape(), cols, gout, buf(grads, *w, wv.numel()));
            }
            if wants(nodes, *x) {
                conv::conv2d_grad_x(
                    xv.shape(),
                    wv.shape(),
                    wv.data(),
                    gout,
                    *stride,
                    *padding,
                    buf(grads, *x, xv.numel()),
                );
            }
        }

        Op::DepthwiseConv2d { x, w, stride, padding } => {
            let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
            if wants(nodes, *w) {
                conv::depthwise_grad_w(xv.shape(), wv.shape(), xv.data(), gout, *stride, *padding, buf(grads, *w, wv.numel()));
            }
            if wants(nodes, *x) {
                conv::depthwise_grad_x(xv.shape(), wv.shape(), wv.data(), gout, *stride, *padding, buf(grads, *x, xv.numel()));
            }
        }

        Op::PointwiseConv2d { x, w } => {
            let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
            let positions = xv.numel() / xv.shape()[3];
            let (cin, cout) = (wv.shape()[0], wv.shape()[1]);
            if wants(nodes, *w) {
                // dW = X^T @ dY over flattened positions
                linalg::gemm_tn_acc(positions, cin, cout, xv.data(), gout, buf(grads, *w, wv.numel()));
            }
            if wants(nodes, *x) {
                // dX = dY @ W^T
                linalg::gemm_nt_acc(positions, cout, cin, gout, wv.data(), buf(grads, *x, xv.numel()));
            }
        }

        Op::BatchNormTrain { x, gamma, beta, eps, mean, var } => {
            let xv = &nodes[x.0].value;
            let gv = &nodes[gamma.0].value;
            let [dx, dgamma, dbeta] = buf3(nodes, grads, [*x, *gamma, *beta]);
            norm::batchnorm_train_backward(
                xv.shape(), xv.data(), gv.data(), mean, var, *eps, gout, dx, dgamma, dbeta,
            );
        }

        Op::BatchNormEval { x, gamma, beta, eps, mean, var } => {
            let xv = &nodes[x.0].value;
            let gv = &nodes[gamma.0].value;
            let [dx, dgamma, dbeta] = buf3(nodes, grads, [*x, *gamma, *beta]);
            norm::batchnorm_eval_backward(
                xv.shape(), xv.data(), gv.data(), mean, var, *eps, gout, dx, dgamma, dbeta,
            );
        }

        Op::LayerNorm { x, gamma, beta, mean, rstd } => {
            let xv = &nodes[x.0].value;
            let gv = &nodes[gamma.0].value;
            let [dx, dgamma, dbeta] = buf3(nodes, grads, [*x, *gamma, *beta]);
            norm::layernorm_backward(
                xv.shape(), xv.data(), gv.data(), mean, rstd, gout, dx, dgamma, dbeta,
            );
        }

        Op::Linear { x, w, b } => {
            let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
            let rows = xv.numel() / xv.shape().last().unwrap();
            let (din, dout) = (wv.shape()[0], wv.shape()[1]);
            if wants(nodes, *w) {
                linalg::gemm_tn_acc(rows, din, dout, xv.data(), gout, buf(grads, *w, wv.numel()));
            }
            if wants(nodes, *b) {
                let db = buf(grads, *b, dout);
                for r in 0..rows {
                    for (j, db_j) in db.iter_mut().enumerate() {
                        *db_j += gout[r * dout + j];
                    }
                }
            }
            if wants(nodes, *x) {
                linalg::gemm_nt_acc(rows, dout, din, gout, wv.data(), buf(grads, *x, xv.numel()));
            }
        }

        Op::Matmul { a, b } => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = bv.shape()[1];
            if wants(nodes, *a) {
                linalg::gemm_nt_acc(m, n, k, gout, bv.data(), buf(grads, *a, av.numel()));
            }
            if wants(nodes, *b) {
                linalg::gemm_tn_acc(m, k, n, av.data(), gout, buf(grads, *b, bv.numel()));
            }
        }

        Op::Bmm { a, b } => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            let (bs, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
            let n = bv.shape()[2];
            if wants(nodes, *a) {
                let da = buf(grads, *a, av.numel());
                for s in 0..bs {
                    linalg::gemm_nt_acc(m, n, k, &gout[s * m * n..(s + 1) * m * n], &bv.data()[s * k * n..(s + 1) * k * n], &mut da[s * m * k..(s + 1) * m * k]);
                }
            }
            if wants(nodes, *b) {
                let db = buf(grads, *b, bv.numel());
                for s in 0..bs {
                    linalg::gemm_tn_acc(m, k, n, &av.data()[s * m * k..(s + 1) * m * k], &gout[s * m * n..(s + 1) * m * n], &mut db[s * k * n..(s + 1) * k * n]);
                }
            }
        }

        Op::TransposeLast2 { x } => {
            if wants(nodes, *x) {
                let xv = &nodes[x.0].value;
                shape_ops::transpose_last2_acc(out_val.shape(), gout, buf(grads, *x, xv.numel()));
            }
        }

        Op::Reshape { x } => {
            if wants(nodes, *x) {
                let xv = &nodes[x.0].value;
                let dx = buf(grads, *x, xv.numel());
                for (d, g) in dx.iter_mut().zip(gout) {
                    *d += *g;
                }
            }
        }

        Op::SplitHeads { x, heads } => {
            if wants(nodes, *x) {
                let xv = &nodes[x.0].value;
                shape_ops::merge_heads_acc(out_val.shape(), *heads, gout, buf(grads, *x, xv.numel()));
            }
        }

        Op::MergeHeads { x, heads } => {
            if wants(nodes, *x) {
                let xv = &nodes[x.0].value;
                shape_ops::split_heads_acc(out_val.shape(), *heads, gout, buf(grads, *x, xv.numel()));
            }
        }

        Op::PermuteTokens { x, perm } => {
            if wants(nodes, *x) {
                let xv = &nodes[x.0].value;
                shape_ops::permute_tokens_acc_inverse(xv.shape(), perm, gout, buf(grads, *x, xv.numel()));
            }
        }

        Op::Relu { x } => {
            if wants(nodes, *x) {
                let xv = &nodes[x.0].value;
                let dx = buf(grads, *x, xv.numel());
                for ((d, g), v) in dx.iter_mut().zip(gout).zip(xv.data()) {
                    if *v > S::ZERO {
                        *d += *g;
                    }
                }
            }
        }

        Op::Gelu { x } => {
            if wants(nodes, *x) {
                let xv = &nodes[x.0].value;
                act::gelu_backward_acc(xv.data(), gout, buf(grads, *x, xv.numel()));
            }
        }

        Op::Softmax { x, axis } => {
            if wants(nodes, *x) {
                let xv = &nodes[x.0].value;
                act::softmax_backward_acc(out_val.shape(), *axis, out_val.data(), gout, buf(grads, *x, xv.numel()));
            }
        }

        Op::Dropout { x, mask } => {
            if wants(nodes, *x) {
                let xv = &nodes[x.0].value;
                let dx = buf(grads, *x, xv.numel());
                for ((d, g), m) in dx.iter_mut().zip(gout).zip(mask) {
                    *d += *g * *m;
                }
            }
        }

        Op::Add { a, b } => {
            for id in [a, b] {
                if wants(nodes, *id) {
                    let n = nodes[id.0].value.numel();
                    let d = buf(grads, *id, n);
                    for (d, g) in d.iter_mut().zip(gout) {
                        *d += *g;
                    }
                }
            }
        }

        Op::Mul { a, b } => {
            if wants(nodes, *a) {
                let bv_data: &[S] = nodes[b.0].value.data();
                // split borrow: read b's value while writing a's grad
                let n = nodes[a.0].value.numel();
                let da = buf(grads, *a, n);
                for ((d, g), v) in da.iter_mut().zip(gout).zip(bv_data) {
                    *d += *g * *v;
                }
            }
            if wants(nodes, *b) {
                let av_data: &[S] = nodes[a.0].value.data();
                let n = nodes[b.0].value.numel();
                let db = buf(grads, *b, n);
                for ((d, g), v) in db.iter_mut().zip(gout).zip(av_data) {
                    *d += *g * *v;
                }
            }
        }

        Op::Scale { x, c } => {
            if wants(nodes, *x) {
                let xv = &nodes[x.0].value;
                let c = S::from_f64(*c);
                let dx = buf(grads, *x, xv.numel());
                for (d, g) in dx.iter_mut().zip(gout) {
                    *d += *g * c;
                }
            }
        }

        Op::Sum { x } => {
            if wants(nodes, *x) {
                let xv = &nodes[x.0].value;
                let g = gout[0];
                let dx = buf(grads, *x, xv.numel());
                for d in dx.iter_mut() {
                    *d += g;
                }
            }
        }

        Op::Mean { x } => {
            if wants(nodes, *x) {
                let xv = &nodes[x.0].value;
                let g = gout[0] / S::from_f64(xv.numel() as f64);
                let dx = buf(grads, *x, xv.numel());
                for d in dx.iter_mut() {
                    *d += g;
                }
            }
        }

        Op::LabelSmoothedCe { logits, labels, epsilon, probs } => {
            if wants(nodes, *logits) {
                let lv = &nodes[logits.0].value;
                loss_ops::label_smoothed_ce_backward_acc(
                    lv.shape(),
                    labels,
                    *epsilon,
                    probs,
                    gout[0],
                    buf(grads, *logits, lv.numel()),
                );
            }
        }
    }
    Ok(())
}
