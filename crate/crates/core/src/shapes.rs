//! Output-shape rules as pure functions of input shapes and attributes.
//! Ops call these; the shape property tests check ops against them.

use crate::error::{Error, Result};

/// Spatial padding policy for convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output extent `ceil(in / stride)`; for an odd total pad the extra
    /// row/column goes on the bottom/right.
    Same,
    /// No padding; output extent `floor((in - k) / stride) + 1`.
    Valid,
}

/// Output spatial extent of a convolution along one axis.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: Padding) -> Result<usize> {
    if stride == 0 {
        return Err(Error::arg("stride must be positive"));
    }
    match padding {
        Padding::Same => Ok(input.div_ceil(stride)),
        Padding::Valid => {
            if kernel > input {
                return Err(Error::dim(format!(
                    "valid padding requires kernel {kernel} <= input {input}"
                )));
            }
            Ok((input - kernel) / stride + 1)
        }
    }
}

/// Leading padding along one axis under `Same`; trailing gets the remainder.
pub fn same_pad_before(input: usize, kernel: usize, stride: usize) -> usize {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    total / 2
}

pub fn conv2d_out_shape(
    x: &[usize],
    w: &[usize],
    stride: usize,
    padding: Padding,
) -> Result<Vec<usize>> {
    if x.len() != 4 || w.len() != 4 {
        return Err(Error::dim(format!(
            "conv2d expects x[N,H,W,Cin] and w[kh,kw,Cin,Cout], got {x:?} and {w:?}"
        )));
    }
    if x[3] != w[2] {
        return Err(Error::dim(format!(
            "conv2d channel mismatch: input has {} channels, kernel expects {}",
            x[3], w[2]
        )));
    }
    let oh = conv_out_extent(x[1], w[0], stride, padding)?;
    let ow = conv_out_extent(x[2], w[1], stride, padding)?;
    Ok(vec![x[0], oh, ow, w[3]])
}

pub fn depthwise_out_shape(
    x: &[usize],
    w: &[usize],
    stride: usize,
    padding: Padding,
) -> Result<Vec<usize>> {
    if x.len() != 4 || w.len() != 3 {
        return Err(Error::dim(format!(
            "depthwise conv expects x[N,H,W,C] and w[kh,kw,C], got {x:?} and {w:?}"
        )));
    }
    if x[3] != w[2] {
        return Err(Error::dim(format!(
            "depthwise channel mismatch: input has {} channels, kernel has {}",
            x[3], w[2]
        )));
    }
    let oh = conv_out_extent(x[1], w[0], stride, padding)?;
    let ow = conv_out_extent(x[2], w[1], stride, padding)?;
    Ok(vec![x[0], oh, ow, x[3]])
}

pub fn pointwise_out_shape(x: &[usize], w: &[usize]) -> Result<Vec<usize>> {
    if x.len() != 4 || w.len() != 2 {
        return Err(Error::dim(format!(
            "pointwise conv expects x[N,H,W,Cin] and w[Cin,Cout], got {x:?} and {w:?}"
        )));
    }
    if x[3] != w[0] {
        return Err(Error::dim(format!(
            "pointwise channel mismatch: input has {} channels, weight expects {}",
            x[3], w[0]
        )));
    }
    Ok(vec![x[0], x[1], x[2], w[1]])
}

pub fn matmul_out_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
        return Err(Error::dim(format!("matmul shape mismatch: {a:?} x {b:?}")));
    }
    Ok(vec![a[0], b[1]])
}

pub fn bmm_out_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != 3 || b.len() != 3 || a[0] != b[0] || a[2] != b[1] {
        return Err(Error::dim(format!("bmm shape mismatch: {a:?} x {b:?}")));
    }
    Ok(vec![a[0], a[1], b[2]])
}

/// `x[..., in] @ w[in, out] + b[out]`.
pub fn linear_out_shape(x: &[usize], w: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if x.is_empty() || w.len() != 2 || b.len() != 1 {
        return Err(Error::dim(format!("linear expects x[..,in], w[in,out], b[out], got {x:?} {w:?} {b:?}")));
    }
    let inner = *x.last().unwrap();
    if inner != w[0] || w[1] != b[0] {
        return Err(Error::dim(format!("linear shape mismatch: {x:?} x {w:?} + {b:?}")));
    }
    let mut out = x.to_vec();
    *out.last_mut().unwrap() = w[1];
    Ok(out)
}

pub fn transpose_last2_shape(x: &[usize]) -> Result<Vec<usize>> {
    if x.len() < 2 {
        return Err(Error::dim(format!("transpose_last2 needs rank >= 2, got {x:?}")));
    }
    let mut out = x.to_vec();
    let n = out.len();
    out.swap(n - 1, n - 2);
    Ok(out)
}

pub fn split_heads_shape(x: &[usize], heads: usize) -> Result<Vec<usize>> {
    if x.len() != 3 {
        return Err(Error::dim(format!("split_heads expects [N,T,D], got {x:?}")));
    }
    if heads == 0 || x[2] % heads != 0 {
        return Err(Error::Config(format!(
            "embedding dim {} not divisible by {} heads",
            x[2], heads
        )));
    }
    Ok(vec![x[0] * heads, x[1], x[2] / heads])
}

pub fn merge_heads_shape(x: &[usize], heads: usize) -> Result<Vec<usize>> {
    if x.len() != 3 {
        return Err(Error::dim(format!("merge_heads expects [N*h,T,dh], got {x:?}")));
    }
    if heads == 0 || x[0] % heads != 0 {
        return Err(Error::dim(format!("batch {} not divisible by {} heads", x[0], heads)));
    }
    Ok(vec![x[0] / heads, x[1], x[2] * heads])
}
