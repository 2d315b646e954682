use super::LossResult;
use crate::error::{contract, Error, Result};
use crate::num::{log_add, log_softmax_backward, Tensor, LOG_ZERO};

/// Number of adjacent equal pairs; each one forces an extra blank frame.
pub fn adjacent_repeats(targets: &[usize]) -> usize {
    targets.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Minimum frame count for which CTC has at least one alignment.
pub fn ctc_min_frames(targets: &[usize]) -> usize {
    targets.len() + adjacent_repeats(targets)
}

pub(crate) fn check_symbols(targets: &[usize], vocab: usize, blank: usize) -> Result<()> {
    if blank >= vocab {
        return Err(contract(format!("blank id {blank} outside vocabulary of {vocab}")));
    }
    match targets.iter().find(|&&s| s == blank || s >= vocab) {
        Some(bad) => Err(Error::Input(format!("invalid target symbol {bad}"))),
        None => Ok(()),
    }
}

/// CTC negative log-likelihood of `targets` under per-frame `log_probs`
/// (`[T x V]`, rows already log-normalized), with the gradient w.r.t. the
/// logits that produced them.
pub fn ctc_loss(log_probs: &Tensor, targets: &[usize], blank: usize) -> Result<LossResult> {
    if log_probs.shape().len() != 2 || log_probs.is_empty() {
        return Err(contract(format!(
            "ctc_loss expects a non-empty [T x V] tensor, got {:?}",
            log_probs.shape()
        )));
    }
    let (t_len, vocab) = (log_probs.dim(0), log_probs.dim(1));
    check_symbols(targets, vocab, blank)?;
    let repeats = adjacent_repeats(targets);
    if t_len < targets.len() + repeats {
        return Err(Error::Infeasible {
            frames: t_len,
            labels: targets.len(),
            repeats,
        });
    }

    // Extended label sequence: blank, y1, blank, y2, ..., yU, blank.
    let s_len = 2 * targets.len() + 1;
    let ext: Vec<usize> = (0..s_len)
        .map(|s| if s % 2 == 0 { blank } else { targets[s / 2] })
        .collect();
    let can_skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
    let lp = |t: usize, s: usize| log_probs.get2(t, ext[s]);

    let mut alpha = vec![LOG_ZERO; t_len * s_len];
    alpha[0] = lp(0, 0);
    if s_len > 1 {
        alpha[1] = lp(0, 1);
    }
    for t in 1..t_len {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        for s in 0..s_len {
            let mut a = prev[s];
            if s >= 1 {
                a = log_add(a, prev[s - 1]);
            }
            if can_skip(s) {
                a = log_add(a, prev[s - 2]);
            }
            cur[s] = if a <= LOG_ZERO { LOG_ZERO } else { a + lp(t, s) };
        }
    }
    let last = (t_len - 1) * s_len;
    let mut log_p = alpha[last + s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[last + s_len - 2]);
    }

    // beta[t][s]: log-probability of finishing from state s at frame t,
    // excluding the emission at t itself.
    let mut beta = vec![LOG_ZERO; t_len * s_len];
    beta[last + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[last + s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let next = (t + 1) * s_len;
            let mut b = beta[next + s] + lp(t + 1, s);
            if s + 1 < s_len {
                b = log_add(b, beta[next + s + 1] + lp(t + 1, s + 1));
            }
            if s + 2 < s_len && can_skip(s + 2) {
                b = log_add(b, beta[next + s + 2] + lp(t + 1, s + 2));
            }
            beta[t * s_len + s] = if b <= LOG_ZERO { LOG_ZERO } else { b };
        }
    }

    let mut grad_lp = Tensor::zeros(&[t_len, vocab]);
    for t in 0..t_len {
        let row = grad_lp.row_mut(t);
        for s in 0..s_len {
            let occ = alpha[t * s_len + s] + beta[t * s_len + s] - log_p;
            if occ > LOG_ZERO / 2.0 {
                row[ext[s]] -= occ.exp();
            }
        }
    }
    let logit_grads = log_softmax_backward(log_probs, &grad_lp, 1)?;
    Ok(LossResult {
        value: -log_p,
        logit_grads,
    })
}
