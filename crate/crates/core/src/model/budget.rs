//! Parameter and multiply-accumulate accounting.
//!
//! The MAC counter is analytic (a closed-form walk over the block plan);
//! the graph accumulates its own per-op counts during execution, giving an
//! independent route the tests compare against. Conventions: convolutions
//! cost `kh*kw*Cin*Cout*H'*W'`, depthwise `kh*kw*C*H'*W'`, linear maps
//! `in*out` per row, attention adds `2*T^2*D` for the score and value
//! products; normalizations, activations, softmax, and biases cost zero.

use super::{LctConfig, LctModel};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BudgetReport {
    pub trainable_params: u64,
    pub macs: u64,
}

impl BudgetReport {
    pub fn of<S: Scalar>(model: &LctModel<S>) -> Self {
        BudgetReport { trainable_params: count_params(model), macs: count_macs(model.config()) }
    }
}

/// Every learnable element: conv/linear weights and biases, normalization
/// gammas and betas, the pooling score weight. Running statistics excluded.
pub fn count_params<S: Scalar>(model: &LctModel<S>) -> u64 {
    model.param_elements() as u64
}

/// Analytic MAC count for one forward pass at the configured input size,
/// batch 1.
pub fn count_macs(cfg: &LctConfig) -> u64 {
    let [h, w, c_in] = cfg.input;
    let d = cfg.embed_dim as u64;
    let stem_c = cfg.stem_channels as u64;
    let shrink = cfg.bottleneck_shrink as u64;
    let hidden = cfg.mlp_hidden() as u64;

    let mut macs: u64 = 0;

    // stem: first conv stride 2, the rest stride 1, all same padding
    let (h1, w1) = (h.div_ceil(2) as u64, w.div_ceil(2) as u64);
    macs += 9 * c_in as u64 * stem_c * h1 * w1;
    for _ in 1..cfg.num_stem_convs {
        macs += 9 * stem_c * stem_c * h1 * w1;
    }

    // linear depthwise-separable stage: depthwise stride 2, then pointwise
    let (h2, w2) = (h1.div_ceil(2), w1.div_ceil(2));
    macs += 9 * stem_c * h2 * w2;
    macs += stem_c * d * h2 * w2;

    // residual bottlenecks at full post-tokenizer resolution
    let positions = h2 * w2;
    let per_bottleneck = d * shrink * positions + 9 * shrink * positions + shrink * d * positions;
    macs += per_bottleneck * cfg.num_bottlenecks as u64;

    // encoders over T tokens
    let t = positions;
    let per_encoder = 3 * t * d * d   // Q,K,V projections
        + 2 * t * t * d               // attention score and value products
        + t * d * d                   // output projection
        + t * d * hidden + t * hidden * d; // MLP
    macs += per_encoder * cfg.num_encoders as u64;

    // pooling head: score FC plus the weighted sum
    macs += t * d + t * d;

    // classifier
    macs += d * cfg.num_classes as u64;

    macs
}

/// Closed-form cost of one encoder at the config's token count; the graph
/// oracle must reproduce this exactly.
pub fn encoder_macs(cfg: &LctConfig) -> u64 {
    let t = cfg.tokens() as u64;
    let d = cfg.embed_dim as u64;
    let hidden = cfg.mlp_hidden() as u64;
    3 * t * d * d + 2 * t * t * d + t * d * d + t * d * hidden + t * hidden * d
}

/// Parameter count of one encoder layer.
pub fn encoder_params(cfg: &LctConfig) -> u64 {
    let d = cfg.embed_dim as u64;
    let hidden = cfg.mlp_hidden() as u64;
    let qkv = 3 * (d * d + d);
    let proj = d * d + d;
    let mlp = d * hidden + hidden + hidden * d + d;
    let norms = 2 * 2 * d;
    qkv + proj + mlp + norms
}
