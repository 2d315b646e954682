use super::ctc::check_symbols;
use super::LossResult;
use crate::error::{contract, Result};
use crate::num::{log_add, log_softmax_backward, Tensor, LOG_ZERO};

/// Transducer negative log-likelihood over the `T x (U+1)` lattice.
///
/// `node_log_probs[t][u]` is the output distribution at frame `t` after `u`
/// emitted labels. Blank advances `t`, label `y[u]` advances `u`, and every
/// path ends with the blank emitted from node `(T-1, U)`.
pub fn rnnt_loss(node_log_probs: &Tensor, targets: &[usize], blank: usize) -> Result<LossResult> {
    let shape = node_log_probs.shape();
    let u_len = targets.len();
    if shape.len() != 3 || shape[0] == 0 || shape[1] != u_len + 1 {
        return Err(contract(format!(
            "rnnt_loss expects [T x {} x V] with T >= 1, got {shape:?}",
            u_len + 1
        )));
    }
    let (t_len, rows, vocab) = (shape[0], shape[1], shape[2]);
    check_symbols(targets, vocab, blank)?;
    let blank_lp = |t: usize, u: usize| node_log_probs.get3(t, u, blank);
    let label_lp = |t: usize, u: usize| node_log_probs.get3(t, u, targets[u]);
    let at = |t: usize, u: usize| t * rows + u;

    let mut alpha = vec![LOG_ZERO; t_len * rows];
    for t in 0..t_len {
        for u in 0..rows {
            if t == 0 && u == 0 {
                alpha[0] = 0.0;
                continue;
            }
            let mut a = LOG_ZERO;
            if t > 0 {
                a = alpha[at(t - 1, u)] + blank_lp(t - 1, u);
            }
            if u > 0 {
                a = log_add(a, alpha[at(t, u - 1)] + label_lp(t, u - 1));
            }
            alpha[at(t, u)] = a;
        }
    }
    let log_p = alpha[at(t_len - 1, u_len)] + blank_lp(t_len - 1, u_len);

    // beta[t][u]: log-probability of completing the path from node (t, u),
    // including the emission made at that node.
    let mut beta = vec![LOG_ZERO; t_len * rows];
    for t in (0..t_len).rev() {
        for u in (0..rows).rev() {
            let mut b = LOG_ZERO;
            if t + 1 < t_len {
                b = beta[at(t + 1, u)] + blank_lp(t, u);
            } else if u == u_len {
                b = blank_lp(t, u);
            }
            if u < u_len {
                b = log_add(b, beta[at(t, u + 1)] + label_lp(t, u));
            }
            beta[at(t, u)] = b;
        }
    }

    let mut grad_lp = Tensor::zeros(shape);
    for t in 0..t_len {
        for u in 0..rows {
            let a = alpha[at(t, u)];
            let after_blank = if t + 1 < t_len {
                beta[at(t + 1, u)]
            } else if u == u_len {
                0.0
            } else {
                LOG_ZERO
            };
            let lane = grad_lp.lane_mut(t, u);
            let occ = a + blank_lp(t, u) + after_blank - log_p;
            if occ > LOG_ZERO / 2.0 {
                lane[blank] -= occ.exp();
            }
            if u < u_len {
                let occ = a + label_lp(t, u) + beta[at(t, u + 1)] - log_p;
                if occ > LOG_ZERO / 2.0 {
                    lane[targets[u]] -= occ.exp();
                }
            }
        }
    }
    let logit_grads = log_softmax_backward(node_log_probs, &grad_lp, 2)?;
    Ok(LossResult {
        value: -log_p,
        logit_grads,
    })
}
