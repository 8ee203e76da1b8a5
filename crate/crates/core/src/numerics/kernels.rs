//! Stand-alone vector kernels. The tape ops in [`super::tape`] reuse these
//! row by row, so the semantics tested here are the semantics of the model.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Softmax over `v`, restricted to positions where `mask` is true.
///
/// Masked-out positions are excluded before normalization and come back as
/// exact zeros.
pub fn softmax(v: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    if let Some(m) = mask {
        if m.len() != v.len() {
            return Err(Error::Shape { op: "softmax", expected: (1, v.len()), found: (1, m.len()) });
        }
    }
    let mut out = vec![0.0; v.len()];
    if softmax_into(v, mask, &mut out) {
        Ok(out)
    } else {
        Err(Error::EmptySupport)
    }
}

/// Writes the masked softmax of `v` into `out`. Returns `false` (and leaves
/// `out` zeroed) when the support is empty.
pub(crate) fn softmax_into(v: &[f64], mask: Option<&[bool]>, out: &mut [f64]) -> bool {
    let valid = |i: usize| mask.is_none_or(|m| m[i]);
    let mut max = f64::NEG_INFINITY;
    for (i, &x) in v.iter().enumerate() {
        if valid(i) && x > max {
            max = x;
        }
    }
    if max == f64::NEG_INFINITY {
        out.iter_mut().for_each(|o| *o = 0.0);
        return false;
    }
    let mut total = 0.0;
    for (i, (&x, o)) in v.iter().zip(out.iter_mut()).enumerate() {
        if valid(i) {
            let e = libm::exp(x - max);
            *o = e;
            total += e;
        } else {
            *o = 0.0;
        }
    }
    let inv = 1.0 / total;
    out.iter_mut().for_each(|o| *o *= inv);
    true
}

/// `gain ∘ (v - mean) / sqrt(var + eps) + bias` with population variance.
pub fn layer_norm(v: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Result<Vec<f64>> {
    if gain.len() != v.len() || bias.len() != v.len() {
        return Err(Error::Shape { op: "layer_norm", expected: (1, v.len()), found: (gain.len(), bias.len()) });
    }
    let mut out = vec![0.0; v.len()];
    let mut xhat = vec![0.0; v.len()];
    layer_norm_into(v, gain, bias, eps, &mut xhat, &mut out);
    Ok(out)
}

/// Normalizes `v` into `xhat`, writes the affine output into `out`, and
/// returns `1 / sqrt(var + eps)`.
pub(crate) fn layer_norm_into(v: &[f64], gain: &[f64], bias: &[f64], eps: f64, xhat: &mut [f64], out: &mut [f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / libm::sqrt(var + eps);
    for i in 0..v.len() {
        xhat[i] = (v[i] - mean) * inv_std;
        out[i] = gain[i] * xhat[i] + bias[i];
    }
    inv_std
}

/// `log(sigmoid(x))` without overflow.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -libm::log1p(libm::exp(-x))
    } else {
        x - libm::log1p(libm::exp(x))
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}
