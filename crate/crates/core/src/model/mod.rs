//! The convolutional-transformer model: tokenizer (stem convs, linear
//! depthwise-separable stage, residual bottlenecks), encoder stack,
//! attention pooling head, and linear classifier.

mod budget;
mod config;

pub use budget::{count_macs, count_params, encoder_macs, encoder_params, BudgetReport};
pub use config::LctConfig;

use crate::error::{Error, Result};
use crate::graph::{Graph, Mode, NodeId};
use crate::ops::attention::AttentionNodes;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::shapes::Padding;
use crate::tensor::Tensor;

pub(crate) const BN_MOMENTUM: f64 = 0.9;
pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Param<S: Scalar> {
    pub name: String,
    pub tensor: Tensor<S>,
}

/// Non-learnable state (batch-norm running statistics).
#[derive(Debug, Clone)]
pub struct BufferState<S: Scalar> {
    pub name: String,
    pub data: Vec<S>,
}

#[derive(Debug, Clone, Copy)]
struct BnIdx {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Debug, Clone, Copy)]
struct AffineIdx {
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone, Copy)]
struct LinearIdx {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct StemConv {
    w: usize,
    bn: BnIdx,
    stride: usize,
}

#[derive(Debug, Clone, Copy)]
struct Dws {
    dw_w: usize,
    dw_bn: BnIdx,
    dw_stride: usize,
    pw_w: usize,
    pw_bn: BnIdx,
}

#[derive(Debug, Clone, Copy)]
struct BottleneckIdx {
    shrink_w: usize,
    shrink_bn: BnIdx,
    dws: Dws,
}

#[derive(Debug, Clone, Copy)]
struct AttnIdx {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone, Copy)]
struct EncoderIdx {
    ln1: AffineIdx,
    attn: AttnIdx,
    ln2: AffineIdx,
    fc1: LinearIdx,
    fc2: LinearIdx,
}

#[derive(Debug, Clone)]
struct Structure {
    stem: Vec<StemConv>,
    dws: Dws,
    bottlenecks: Vec<BottleneckIdx>,
    encoders: Vec<EncoderIdx>,
    seqpool_ln: AffineIdx,
    seqpool_fc: LinearIdx,
    classifier: LinearIdx,
}

/// Instantiated model: ordered parameter registry plus block structure.
/// Parameter iteration order is fixed by construction, so two models built
/// from the same config always agree on flat layout.
pub struct LctModel<S: Scalar> {
    config: LctConfig,
    params: Vec<Param<S>>,
    buffers: Vec<BufferState<S>>,
    structure: Structure,
}

struct Registry<'r, S: Scalar> {
    params: Vec<Param<S>>,
    buffers: Vec<BufferState<S>>,
    rng: &'r mut Rng,
}

impl<'r, S: Scalar> Registry<'r, S> {
    fn kaiming_conv(&mut self, name: String, shape: Vec<usize>, fan_in: usize) -> usize {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<S> = (0..n)
            .map(|_| S::from_f64(self.rng.uniform_range(-bound, bound)))
            .collect();
        self.push(name, Tensor::from_vec(shape, data).unwrap())
    }

    fn trunc_normal(&mut self, name: String, shape: Vec<usize>) -> usize {
        let n: usize = shape.iter().product();
        let data: Vec<S> = (0..n).map(|_| S::from_f64(self.rng.trunc_normal(0.02))).collect();
        self.push(name, Tensor::from_vec(shape, data).unwrap())
    }

    fn constant(&mut self, name: String, shape: Vec<usize>, value: f64) -> usize {
        self.push(name, Tensor::full(shape, S::from_f64(value)))
    }

    fn push(&mut self, name: String, tensor: Tensor<S>) -> usize {
        self.params.push(Param { name, tensor });
        self.params.len() - 1
    }

    fn bn(&mut self, prefix: &str, channels: usize) -> BnIdx {
        let gamma = self.constant(format!("{prefix}.gamma"), vec![channels], 1.0);
        let beta = self.constant(format!("{prefix}.beta"), vec![channels], 0.0);
        let mean = self.buffer(format!("{prefix}.running_mean"), vec![S::ZERO; channels]);
        let var = self.buffer(format!("{prefix}.running_var"), vec![S::ONE; channels]);
        BnIdx { gamma, beta, mean, var }
    }

    fn ln(&mut self, prefix: &str, dim: usize) -> AffineIdx {
        let gamma = self.constant(format!("{prefix}.gamma"), vec![dim], 1.0);
        let beta = self.constant(format!("{prefix}.beta"), vec![dim], 0.0);
        AffineIdx { gamma, beta }
    }

    fn linear(&mut self, prefix: &str, din: usize, dout: usize) -> LinearIdx {
        let w = self.trunc_normal(format!("{prefix}.w"), vec![din, dout]);
        let b = self.constant(format!("{prefix}.b"), vec![dout], 0.0);
        LinearIdx { w, b }
    }

    fn dws(&mut self, prefix: &str, channels: usize, out_channels: usize, dw_stride: usize) -> Dws {
        let dw_w = self.kaiming_conv(format!("{prefix}.dw.w"), vec![3, 3, channels], 9);
        let dw_bn = self.bn(&format!("{prefix}.dw_bn"), channels);
        let pw_w = self.kaiming_conv(format!("{prefix}.pw.w"), vec![channels, out_channels], channels);
        let pw_bn = self.bn(&format!("{prefix}.pw_bn"), out_channels);
        Dws { dw_w, dw_bn, dw_stride, pw_w, pw_bn }
    }

    fn buffer(&mut self, name: String, data: Vec<S>) -> usize {
        self.buffers.push(BufferState { name, data });
        self.buffers.len() - 1
    }
}

impl<S: Scalar> LctModel<S> {
    /// Instantiate all parameters from the config, drawing initial values
    /// from `rng` in registry order.
    pub fn build(config: LctConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut reg = Registry::<S> { params: Vec::new(), buffers: Vec::new(), rng };
        let d = config.embed_dim;
        let stem_c = config.stem_channels;
        let shrink = config.bottleneck_shrink;
        let [_, _, c_in] = config.input;

        let mut stem = Vec::with_capacity(config.num_stem_convs);
        for i in 0..config.num_stem_convs {
            let (cin, stride) = if i == 0 { (c_in, 2) } else { (stem_c, 1) };
            let w = reg.kaiming_conv(
                format!("tokenizer.stem.{i}.conv.w"),
                vec![3, 3, cin, stem_c],
                9 * cin,
            );
            let bn = reg.bn(&format!("tokenizer.stem.{i}.bn"), stem_c);
            stem.push(StemConv { w, bn, stride });
        }

        let dws = reg.dws("tokenizer.dws", stem_c, d, 2);

        let mut bottlenecks = Vec::with_capacity(config.num_bottlenecks);
        for r in 0..config.num_bottlenecks {
            let prefix = format!("tokenizer.bottleneck.{r}");
            let shrink_w = reg.kaiming_conv(format!("{prefix}.shrink.w"), vec![d, shrink], d);
            let shrink_bn = reg.bn(&format!("{prefix}.shrink_bn"), shrink);
            let dws_blk = reg.dws(&format!("{prefix}.dws"), shrink, d, 1);
            bottlenecks.push(BottleneckIdx { shrink_w, shrink_bn, dws: dws_blk });
        }

        let hidden = config.mlp_hidden();
        let mut encoders = Vec::with_capacity(config.num_encoders);
        for l in 0..config.num_encoders {
            let prefix = format!("encoder.{l}");
            let ln1 = reg.ln(&format!("{prefix}.ln1"), d);
            let q = reg.linear(&format!("{prefix}.attn.q"), d, d);
            let k = reg.linear(&format!("{prefix}.attn.k"), d, d);
            let v = reg.linear(&format!("{prefix}.attn.v"), d, d);
            let o = reg.linear(&format!("{prefix}.attn.out"), d, d);
            let ln2 = reg.ln(&format!("{prefix}.ln2"), d);
            let fc1 = reg.linear(&format!("{prefix}.mlp.fc1"), d, hidden);
            let fc2 = reg.linear(&format!("{prefix}.mlp.fc2"), hidden, d);
            encoders.push(EncoderIdx {
                ln1,
                attn: AttnIdx { wq: q.w, bq: q.b, wk: k.w, bk: k.b, wv: v.w, bv: v.b, wo: o.w, bo: o.b },
                ln2,
                fc1,
                fc2,
            });
        }

        let seqpool_ln = reg.ln("seqpool.ln", d);
        let seqpool_fc = reg.linear("seqpool.fc", d, 1);
        let classifier = reg.linear("classifier", d, config.num_classes);

        Ok(LctModel {
            config,
            params: reg.params,
            buffers: reg.buffers,
            structure: Structure { stem, dws, bottlenecks, encoders, seqpool_ln, seqpool_fc, classifier },
        })
    }

    pub fn config(&self) -> &LctConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<S>] {
        &self.params
    }

    pub fn buffers(&self) -> &[BufferState<S>] {
        &self.buffers
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    /// In-place parameter update, the one sanctioned mutation path
    /// (used by optimizers and flat-vector loading).
    pub fn update_param(&mut self, index: usize, f: impl FnOnce(&mut [S])) {
        f(self.params[index].tensor.data_mut());
    }

    /// Bind every parameter as a graph leaf, in registry order.
    pub fn bind_params(&self, g: &mut Graph<S>, requires_grad: bool) -> Vec<NodeId> {
        self.params
            .iter()
            .map(|p| {
                let mut t = p.tensor.clone();
                t.requires_grad = requires_grad;
                g.leaf(t)
            })
            .collect()
    }

    /// Full forward pass to logits. Train mode uses batch statistics and
    /// updates running ones; dropout draws from `rng`.
    pub fn forward(
        &mut self,
        g: &mut Graph<S>,
        x: &Tensor<S>,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<ForwardOutput> {
        let param_nodes = self.bind_params(g, mode == Mode::Train);
        self.forward_with(g, &param_nodes, x, mode, rng, None)
    }

    /// Forward pass with caller-supplied parameter leaves (gradient checks
    /// bind their own) and an optional permutation of the token axis applied
    /// right after the tokenizer reshape.
    pub fn forward_with(
        &mut self,
        g: &mut Graph<S>,
        params: &[NodeId],
        x: &Tensor<S>,
        mode: Mode,
        rng: &mut Rng,
        token_perm: Option<&[usize]>,
    ) -> Result<ForwardOutput> {
        if params.len() != self.params.len() {
            return Err(Error::arg(format!(
                "expected {} parameter nodes, got {}",
                self.params.len(),
                params.len()
            )));
        }
        let [h_in, w_in, c_in] = self.config.input;
        let xs = x.shape();
        if xs.len() != 4 || xs[1] != h_in || xs[2] != w_in || xs[3] != c_in {
            return Err(Error::dim(format!(
                "input shape {xs:?} does not match configured {h_in}x{w_in}x{c_in}"
            )));
        }

        let mut h = g.leaf(x.clone());

        let stem = self.structure.stem.clone();
        for blk in &stem {
            h = g.conv2d(h, params[blk.w], blk.stride, Padding::Same)?;
            h = self.bn_forward(g, params, h, blk.bn, mode)?;
            h = g.relu(h)?;
        }

        let dws = self.structure.dws.clone();
        h = self.dws_forward(g, params, h, &dws, mode)?;

        let bottlenecks = self.structure.bottlenecks.clone();
        for blk in &bottlenecks {
            let block_in = h;
            h = g.pointwise_conv2d(h, params[blk.shrink_w])?;
            h = self.bn_forward(g, params, h, blk.shrink_bn, mode)?;
            h = g.relu(h)?;
            h = self.dws_forward(g, params, h, &blk.dws, mode)?;
            h = g.add(h, block_in)?;
        }

        // flatten spatial positions into the token axis
        let t = self.config.tokens();
        let d = self.config.embed_dim;
        let n = xs[0];
        h = g.reshape(h, vec![n, t, d])?;
        if let Some(perm) = token_perm {
            h = g.permute_tokens(h, perm)?;
        }
        let tokens = h;

        let encoders = self.structure.encoders.clone();
        for enc in &encoders {
            let a_in = g.layernorm(h, params[enc.ln1.gamma], params[enc.ln1.beta], LN_EPS)?;
            let attn = AttentionNodes {
                wq: params[enc.attn.wq],
                bq: params[enc.attn.bq],
                wk: params[enc.attn.wk],
                bk: params[enc.attn.bk],
                wv: params[enc.attn.wv],
                bv: params[enc.attn.bv],
                wo: params[enc.attn.wo],
                bo: params[enc.attn.bo],
            };
            let a = g.mhsa(a_in, &attn, self.config.heads, self.config.attn_dropout, mode, rng)?;
            h = g.add(h, a)?;

            let m_in = g.layernorm(h, params[enc.ln2.gamma], params[enc.ln2.beta], LN_EPS)?;
            let mut m = g.linear(m_in, params[enc.fc1.w], params[enc.fc1.b])?;
            m = g.gelu(m)?;
            if mode == Mode::Train && self.config.dropout > 0.0 {
                m = g.dropout(m, self.config.dropout, rng)?;
            }
            m = g.linear(m, params[enc.fc2.w], params[enc.fc2.b])?;
            if mode == Mode::Train && self.config.dropout > 0.0 {
                m = g.dropout(m, self.config.dropout, rng)?;
            }
            h = g.add(h, m)?;
        }

        let (pooled, pool_weights) = self.seqpool(g, params, h)?;
        let logits = g.linear(pooled, params[self.structure.classifier.w], params[self.structure.classifier.b])?;
        Ok(ForwardOutput { logits, pool_weights, tokens })
    }

    /// Attention pooling over the final sequence: weights from a linear
    /// score on the normalized tokens, applied to the raw tokens.
    fn seqpool(&self, g: &mut Graph<S>, params: &[NodeId], z: NodeId) -> Result<(NodeId, NodeId)> {
        let ln = self.structure.seqpool_ln;
        let fc = self.structure.seqpool_fc;
        let normed = g.layernorm(z, params[ln.gamma], params[ln.beta], LN_EPS)?;
        let scores = g.linear(normed, params[fc.w], params[fc.b])?; // [N,T,1]
        let scores_t = g.transpose_last2(scores)?; // [N,1,T]
        let weights = g.softmax(scores_t, 2)?;
        let pooled = g.bmm(weights, z)?; // [N,1,D]
        let shape = g.value(pooled).shape().to_vec();
        let out = g.reshape(pooled, vec![shape[0], shape[2]])?;
        Ok((out, weights))
    }

    fn dws_forward(
        &mut self,
        g: &mut Graph<S>,
        params: &[NodeId],
        x: NodeId,
        dws: &Dws,
        mode: Mode,
    ) -> Result<NodeId> {
        let mut h = g.depthwise_conv2d(x, params[dws.dw_w], dws.dw_stride, Padding::Same)?;
        h = self.bn_forward(g, params, h, dws.dw_bn, mode)?;
        h = g.relu(h)?;
        h = g.pointwise_conv2d(h, params[dws.pw_w])?;
        // pointwise stage ends in identity ("linear") activation
        self.bn_forward(g, params, h, dws.pw_bn, mode)
    }

    fn bn_forward(
        &mut self,
        g: &mut Graph<S>,
        params: &[NodeId],
        x: NodeId,
        bn: BnIdx,
        mode: Mode,
    ) -> Result<NodeId> {
        match mode {
            Mode::Train => {
                let (y, mean, var) = g.batchnorm_train(x, params[bn.gamma], params[bn.beta], BN_EPS)?;
                let mom = S::from_f64(BN_MOMENTUM);
                let one_minus = S::from_f64(1.0 - BN_MOMENTUM);
                for (r, b) in self.buffers[bn.mean].data.iter_mut().zip(&mean) {
                    *r = mom * *r + one_minus * *b;
                }
                for (r, b) in self.buffers[bn.var].data.iter_mut().zip(&var) {
                    *r = mom * *r + one_minus * *b;
                }
                Ok(y)
            }
            Mode::Eval => g.batchnorm_eval(
                x,
                params[bn.gamma],
                params[bn.beta],
                &self.buffers[bn.mean].data,
                &self.buffers[bn.var].data,
                BN_EPS,
            ),
        }
    }

    /// Pull gradients for every parameter out of a backward-completed graph.
    pub fn collect_grads(&self, g: &Graph<S>, param_nodes: &[NodeId]) -> Result<Vec<Vec<S>>> {
        param_nodes
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                g.grad(id)
                    .map(|s| s.to_vec())
                    .ok_or_else(|| Error::state(format!("missing gradient for {}", self.params[i].name)))
            })
            .collect()
    }

    /// Total flat length: parameters first, then running statistics.
    pub fn flat_len(&self) -> usize {
        self.param_elements() + self.buffer_elements()
    }

    pub fn param_elements(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn buffer_elements(&self) -> usize {
        self.buffers.iter().map(|b| b.data.len()).sum()
    }

    /// Canonical flat serialization: parameters in registry order followed
    /// by running statistics as a trailing segment.
    pub fn get_flat(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.flat_len());
        for p in &self.params {
            out.extend_from_slice(p.tensor.data());
        }
        for b in &self.buffers {
            out.extend_from_slice(&b.data);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[S]) -> Result<()> {
        if flat.len() != self.flat_len() {
            return Err(Error::dim(format!(
                "flat vector length {} != expected {} ({} params + {} stats)",
                flat.len(),
                self.flat_len(),
                self.param_elements(),
                self.buffer_elements()
            )));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.tensor.numel();
            p.tensor.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        for b in &mut self.buffers {
            let n = b.data.len();
            b.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

/// Nodes of interest from a forward pass.
pub struct ForwardOutput {
    pub logits: NodeId,
    /// SeqPool attention weights `[N,1,T]`; nonnegative, rows sum to 1.
    pub pool_weights: NodeId,
    /// Token sequence right after the tokenizer reshape `[N,T,D]`.
    pub tokens: NodeId,
}
