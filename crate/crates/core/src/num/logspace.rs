//! Log-domain reductions used by the sequence losses.

use super::Tensor;
use crate::error::{contract, Result};

/// Stand-in for log(0). Any value at or below this is treated as an exact zero
/// probability, which keeps the DP recursions free of `-inf` arithmetic.
pub const LOG_ZERO: f64 = -1e30;

#[inline]
pub fn is_log_zero(x: f64) -> bool {
    x <= LOG_ZERO
}

/// `log(exp(a) + exp(b))` with `LOG_ZERO` absorbing.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if is_log_zero(a) {
        return if is_log_zero(b) { LOG_ZERO } else { b };
    }
    if is_log_zero(b) {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    let max = values
        .iter()
        .copied()
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
        .ok_or_else(|| contract("log_sum_exp of an empty sequence"))?;
    if is_log_zero(max) {
        return Ok(LOG_ZERO);
    }
    let s: f64 = values
        .iter()
        .filter(|v| !is_log_zero(**v))
        .map(|v| (v - max).exp())
        .sum();
    Ok(max + s.ln())
}

fn lanes(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(contract(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, len, inner))
}

/// Normalizes `logits` along `axis` into log-probabilities.
pub fn log_softmax(logits: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = lanes(logits.shape(), axis)?;
    let mut out = logits.clone();
    let x = logits.data();
    let y = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let mut max = f64::NEG_INFINITY;
            for j in 0..len {
                max = max.max(x[at(j)]);
            }
            let mut s = 0.0;
            for j in 0..len {
                s += (x[at(j)] - max).exp();
            }
            let lse = max + s.ln();
            for j in 0..len {
                y[at(j)] = x[at(j)] - lse;
            }
        }
    }
    Ok(out)
}

/// Pulls a gradient w.r.t. log-probabilities back to the logits:
/// `dz_j = g_j - p_j * sum_k g_k` along `axis`.
pub fn log_softmax_backward(log_probs: &Tensor, grad: &Tensor, axis: usize) -> Result<Tensor> {
    if !log_probs.same_shape(grad) {
        return Err(contract("log_softmax_backward shape mismatch"));
    }
    let (outer, len, inner) = lanes(log_probs.shape(), axis)?;
    let mut out = grad.clone();
    let lp = log_probs.data();
    let g = grad.data();
    let y = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let total: f64 = (0..len).map(|j| g[at(j)]).sum();
            for j in 0..len {
                y[at(j)] = g[at(j)] - lp[at(j)].exp() * total;
            }
        }
    }
    Ok(out)
}
