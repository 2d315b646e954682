//! Exact CTC and transducer losses (log-space forward-backward) and the
//! weighted hybrid objective.

mod base;
mod ctc;
mod rnnt;

pub use base::{base_loss, base_terms, BaseLoss, BaseTerms, LossWeights};
pub use ctc::{adjacent_repeats, ctc_loss, ctc_min_frames};
pub use rnnt::rnnt_loss;

use crate::num::Tensor;

/// Negative log-likelihood (nats) and its gradient w.r.t. the logits behind
/// the log-probabilities the loss was given.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub logit_grads: Tensor,
}
