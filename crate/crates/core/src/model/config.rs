use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Natural-language variant grid: `OnDev-LCT-L/M` has `L` encoders and `M`
/// stem convolutions, everything else at defaults.
pub const VARIANT_ENCODERS: [usize; 4] = [1, 2, 4, 8];
pub const VARIANT_STEM_CONVS: [usize; 2] = [1, 3];

/// Architecture description. `input` is `(H, W, C)` with `H`, `W` divisible
/// by four (the tokenizer downsamples twice by stride 2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LctConfig {
    pub num_encoders: usize,
    pub num_stem_convs: usize,
    pub num_bottlenecks: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub stem_channels: usize,
    pub bottleneck_shrink: usize,
    pub num_classes: usize,
    pub input: [usize; 3],
    pub dropout: f64,
    pub attn_dropout: f64,
}

impl Default for LctConfig {
    fn default() -> Self {
        LctConfig {
            num_encoders: 1,
            num_stem_convs: 1,
            num_bottlenecks: 4,
            embed_dim: 128,
            heads: 4,
            mlp_ratio: 1.0,
            stem_channels: 64,
            bottleneck_shrink: 64,
            num_classes: 10,
            input: [32, 32, 3],
            dropout: 0.1,
            attn_dropout: 0.1,
        }
    }
}

impl LctConfig {
    /// Config for a named grid variant, e.g. `OnDev-LCT-2/3`.
    pub fn variant(name: &str, num_classes: usize, input: [usize; 3]) -> Result<Self> {
        let rest = name
            .strip_prefix("OnDev-LCT-")
            .ok_or_else(|| Error::config(format!("unknown variant '{name}'")))?;
        let (l, m) = rest
            .split_once('/')
            .ok_or_else(|| Error::config(format!("variant '{name}' must look like OnDev-LCT-L/M")))?;
        let l: usize = l.parse().map_err(|_| Error::config(format!("bad encoder count in '{name}'")))?;
        let m: usize = m.parse().map_err(|_| Error::config(format!("bad stem conv count in '{name}'")))?;
        if !VARIANT_ENCODERS.contains(&l) || !VARIANT_STEM_CONVS.contains(&m) {
            return Err(Error::config(format!(
                "variant '{name}' outside the grid L in {VARIANT_ENCODERS:?}, M in {VARIANT_STEM_CONVS:?}; \
                 use an explicit model section for other sizes"
            )));
        }
        let cfg = LctConfig { num_encoders: l, num_stem_convs: m, num_classes, input, ..Default::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn variant_name(&self) -> String {
        format!("OnDev-LCT-{}/{}", self.num_encoders, self.num_stem_convs)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_encoders", self.num_encoders),
            ("num_stem_convs", self.num_stem_convs),
            ("num_bottlenecks", self.num_bottlenecks),
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("stem_channels", self.stem_channels),
            ("bottleneck_shrink", self.bottleneck_shrink),
            ("num_classes", self.num_classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::config(format!(
                "embed_dim {} must be divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.mlp_ratio <= 0.0 {
            return Err(Error::config("mlp_ratio must be positive".to_string()));
        }
        let [h, w, c] = self.input;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::config(format!("input extents must be positive, got {:?}", self.input)));
        }
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::config(format!(
                "input H, W must be divisible by 4 (two stride-2 stages), got {h}x{w}"
            )));
        }
        for (name, p) in [("dropout", self.dropout), ("attn_dropout", self.attn_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(format!("{name} {p} outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// Hidden width of the encoder MLP.
    pub fn mlp_hidden(&self) -> usize {
        ((self.embed_dim as f64 * self.mlp_ratio).round() as usize).max(1)
    }

    /// Token count after the tokenizer's two stride-2 stages.
    pub fn tokens(&self) -> usize {
        (self.input[0] / 4) * (self.input[1] / 4)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_grid_parses() {
        let cfg = LctConfig::variant("OnDev-LCT-2/3", 10, [32, 32, 3]).unwrap();
        assert_eq!(cfg.num_encoders, 2);
        assert_eq!(cfg.num_stem_convs, 3);
        assert_eq!(cfg.embed_dim, 128);
        assert_eq!(cfg.heads, 4);
        assert_eq!(cfg.variant_name(), "OnDev-LCT-2/3");
    }

    #[test]
    fn variant_outside_grid_rejected() {
        assert!(LctConfig::variant("OnDev-LCT-3/1", 10, [32, 32, 3]).is_err());
        assert!(LctConfig::variant("OnDev-LCT-1/2", 10, [32, 32, 3]).is_err());
        assert!(LctConfig::variant("LCT-1/1", 10, [32, 32, 3]).is_err());
    }

    #[test]
    fn explicit_config_allows_off_grid_sizes() {
        let cfg = LctConfig { num_encoders: 3, ..Default::default() };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn input_must_be_divisible_by_four() {
        let cfg = LctConfig { input: [30, 32, 3], ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn heads_must_divide_dim() {
        let cfg = LctConfig { heads: 3, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn tokens_for_common_inputs() {
        let cfg = LctConfig { input: [32, 32, 3], ..Default::default() };
        assert_eq!(cfg.tokens(), 64);
        let cfg = LctConfig { input: [28, 28, 1], ..Default::default() };
        assert_eq!(cfg.tokens(), 49);
    }
}
