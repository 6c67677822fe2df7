//! Numerically stable reductions and scalar activations.

use super::Tensor;
use crate::error::{Error, Result};

/// `ln Σ exp(v)` with max subtraction. Returns `-inf` only for an all `-inf` slice.
pub fn lse(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Writes `softmax(values)` into `out`.
pub fn softmax_into(values: &[f64], out: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(values) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn softmax_vec(values: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    softmax_into(values, &mut out);
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln σ(x) = -softplus(-x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::InvalidArgument(format!(
            "axis {axis} out of range for rank {}",
            shape.len()
        )));
    }
    let len = shape[axis];
    if len == 0 {
        return Err(Error::EmptyAxis);
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, len, inner))
}

/// Log-sum-exp along `axis`; the axis is removed from the output shape.
pub fn logsumexp(values: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = split_axis(values.shape(), axis)?;
    let data = values.data();
    let mut out = Vec::with_capacity(outer * inner);
    let mut lane = vec![0.0; len];
    for o in 0..outer {
        for i in 0..inner {
            for (k, slot) in lane.iter_mut().enumerate() {
                *slot = data[(o * len + k) * inner + i];
            }
            out.push(lse(&lane));
        }
    }
    let mut shape = values.shape().to_vec();
    shape.remove(axis);
    Tensor::new(shape, out)
}

/// Softmax along `axis`; output has the input shape.
pub fn softmax(values: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = split_axis(values.shape(), axis)?;
    let data = values.data();
    let mut out = vec![0.0; data.len()];
    let mut lane = vec![0.0; len];
    let mut probs = vec![0.0; len];
    for o in 0..outer {
        for i in 0..inner {
            for (k, slot) in lane.iter_mut().enumerate() {
                *slot = data[(o * len + k) * inner + i];
            }
            softmax_into(&lane, &mut probs);
            for (k, &p) in probs.iter().enumerate() {
                out[(o * len + k) * inner + i] = p;
            }
        }
    }
    Tensor::new(values.shape().to_vec(), out)
}
