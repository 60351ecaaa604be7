//! Multi-head self-attention composed from the primitive ops.

use crate::error::{Error, Result};
use crate::graph::{Graph, Mode, NodeId};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Graph leaves for the four attention projections (weights `D x D`,
/// biases `D`).
#[derive(Debug, Clone, Copy)]
pub struct AttentionNodes {
    pub wq: NodeId,
    pub bq: NodeId,
    pub wk: NodeId,
    pub bk: NodeId,
    pub wv: NodeId,
    pub bv: NodeId,
    pub wo: NodeId,
    pub bo: NodeId,
}

impl<S: Scalar> Graph<S> {
    /// Scaled dot-product attention over `h` heads on `z[N,T,D]`:
    /// per head `softmax(Q K^T / sqrt(D/h)) V`, heads concatenated and
    /// projected. Dropout applies to the attention weights in train mode.
    pub fn mhsa(
        &mut self,
        z: NodeId,
        params: &AttentionNodes,
        heads: usize,
        attn_dropout_p: f64,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<NodeId> {
        let shape = self.value(z).shape();
        if shape.len() != 3 {
            return Err(Error::dim(format!("mhsa expects [N,T,D], got {shape:?}")));
        }
        let d = shape[2];
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "embedding dim {d} not divisible by {heads} heads"
            )));
        }
        let dh = d / heads;

        let q = self.linear(z, params.wq, params.bq)?;
        let k = self.linear(z, params.wk, params.bk)?;
        let v = self.linear(z, params.wv, params.bv)?;

        let qh = self.split_heads(q, heads)?;
        let kh = self.split_heads(k, heads)?;
        let vh = self.split_heads(v, heads)?;

        let kt = self.transpose_last2(kh)?;
        let scores = self.bmm(qh, kt)?;
        let scaled = self.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let mut attn = self.softmax(scaled, 2)?;
        if mode == Mode::Train && attn_dropout_p > 0.0 {
            attn = self.dropout(attn, attn_dropout_p, rng)?;
        }
        let ctx = self.bmm(attn, vh)?;
        let merged = self.merge_heads(ctx, heads)?;
        self.linear(merged, params.wo, params.bo)
    }
}
